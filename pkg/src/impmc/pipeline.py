"""End-to-end methods and the observations-per-user sweep."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .cluster import ClusterConfig, cluster_model
from .data import RatingsDataset, cold_start_split
from .mp import MpConfig, posteriors, run
from .predict import (
    Predictions,
    RmseReport,
    kmeans_predict,
    movie_average_baseline,
    predict_posteriors,
    rmse,
)

METHODS = ("imp", "kmeans", "movie_avg")


@dataclass(frozen=True)
class ImpConfig:
    g_u: int = 4
    g_v: int = 4
    inner_iters: int = 10
    beta: float = math.inf
    split_noise_sigma: float | None = None
    smoothing: float = 1.0
    uniform_priors: bool = False
    mp: MpConfig = MpConfig()

    def cluster_configs(self, seed: int) -> tuple[ClusterConfig, ClusterConfig]:
        def make(g):
            return ClusterConfig(g, self.inner_iters, self.beta, self.split_noise_sigma, seed)
        return make(self.g_u), make(self.g_v)


def predict_methods(
    train: RatingsDataset, queries: np.ndarray, methods: Sequence[str], cfg: ImpConfig, seed: int
) -> dict[str, Predictions]:
    """Predictions of every requested method; clustering is shared by imp and kmeans."""
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
    out: dict[str, Predictions] = {}
    if "movie_avg" in methods:
        out["movie_avg"] = movie_average_baseline(train, queries)
    if "imp" in methods or "kmeans" in methods:
        ucfg, mcfg = cfg.cluster_configs(seed)
        model, ucb, mcb = cluster_model(train, ucfg, mcfg, cfg.smoothing, cfg.uniform_priors)
        if "kmeans" in methods:
            out["kmeans"] = kmeans_predict(ucb, mcb, model, queries)
        if "imp" in methods:
            mp_cfg = replace(cfg.mp, rng_seed=seed)
            state, trained, _ = run(train, model, mp_cfg)
            out["imp"] = predict_posteriors(posteriors(state, train, trained, queries))
    return {m: out[m] for m in methods}


def holdout_queries(holdout: RatingsDataset) -> np.ndarray:
    return np.column_stack([holdout.users, holdout.movies])


@dataclass
class SweepRow:
    method: str
    cap: int
    seed: int
    g_u: int
    g_v: int
    report: RmseReport


def _cell(data, cap, seed, methods, cfg, holdout_size, order):
    train, holdout = cold_start_split(data, cap, holdout_size, seed, order)
    preds = predict_methods(train, holdout_queries(holdout), methods, cfg, seed)
    return [SweepRow(m, cap, seed, cfg.g_u, cfg.g_v, rmse(p, holdout, train)) for m, p in preds.items()]


def sweep(
    data: RatingsDataset,
    caps: Sequence[int],
    methods: Sequence[str],
    seeds: Sequence[int],
    cfg: ImpConfig = ImpConfig(),
    holdout_size: int | None = 1000,
    order: str = "after",
    grid: Sequence[tuple[int, int]] | None = None,
    threads: int = 1,
) -> list[SweepRow]:
    """RMSE of each method at each per-user cap and seed.

    With ``grid`` the group-dependent methods run once per (g_u, g_v); the
    rows carry the configuration so a caller can pick per cap.
    """
    if not caps:
        raise ValueError("caps must be nonempty")
    jobs = []
    configs = [cfg] if not grid else [replace(cfg, g_u=gu, g_v=gv) for gu, gv in grid]
    for cap in caps:
        for seed in seeds:
            for i, c in enumerate(configs):
                ms = list(methods) if i == 0 else [m for m in methods if m != "movie_avg"]
                if ms:
                    jobs.append((data, cap, seed, ms, c, holdout_size, order))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda j: _cell(*j), jobs))
    else:
        results = [_cell(*j) for j in jobs]
    rows = [r for cell in results for r in cell]
    rows.sort(key=lambda r: (r.method, r.cap, r.seed, r.g_u, r.g_v))
    return rows


@dataclass
class SweepAverage:
    method: str
    cap: int
    g_u: int
    g_v: int
    n_seeds: int
    rmse: float
    buckets: dict[str, float]
    n_holdout: float


def average_rows(rows: Sequence[SweepRow]) -> list[SweepAverage]:
    groups: dict[tuple, list[SweepRow]] = {}
    for r in rows:
        key = (r.method, r.cap, r.g_u, r.g_v) if r.method != "movie_avg" else (r.method, r.cap, 0, 0)
        groups.setdefault(key, []).append(r)
    out = []
    for (method, cap, gu, gv), rs in sorted(groups.items()):
        buckets = {
            b: float(np.nanmean([r.report.buckets[b] for r in rs]))
            if any(not math.isnan(r.report.buckets[b]) for r in rs) else float("nan")
            for b in rs[0].report.buckets
        }
        out.append(SweepAverage(
            method, cap, gu, gv, len(rs),
            float(np.mean([r.report.rmse for r in rs])), buckets,
            float(np.mean([r.report.n for r in rs])),
        ))
    return out


def best_per_cap(avgs: Sequence[SweepAverage]) -> list[SweepAverage]:
    """Lowest mean validation RMSE per (method, cap) across grid configs."""
    best: dict[tuple[str, int], SweepAverage] = {}
    for a in avgs:
        k = (a.method, a.cap)
        if k not in best or a.rmse < best[k].rmse:
            best[k] = a
    return [best[k] for k in sorted(best)]
