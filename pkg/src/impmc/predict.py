"""Point predictions, RMSE, baselines and the factorized view of the estimate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cluster import ClusterConfig, CriticCodebook, cluster_model
from .data import RatingsDataset
from .model import GroupModel
from .mp import PosteriorSet

DEGREE_BUCKETS = (("lt3", lambda d: d < 3), ("lt5", lambda d: d < 5), ("ge5", lambda d: d >= 5))


@dataclass
class Predictions:
    users: np.ndarray
    movies: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.movies = np.asarray(self.movies, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def for_queries(cls, queries, values) -> "Predictions":
        q = np.asarray(queries, dtype=np.int64).reshape(-1, 2)
        return cls(q[:, 0], q[:, 1], values)


def clip(value, r_max: int):
    """Clamp predictions into [1, r_max]."""
    out = np.minimum(float(r_max), np.maximum(1.0, value))
    return float(out) if np.ndim(out) == 0 else out


def predict_mean(posterior: np.ndarray) -> float | np.ndarray:
    """Conditional mean of a rating distribution (or of each row), clipped."""
    p = np.asarray(posterior, dtype=np.float64)
    r_max = p.shape[-1]
    return clip(p @ np.arange(1, r_max + 1, dtype=np.float64), r_max)


def predict_posteriors(post: PosteriorSet) -> Predictions:
    return Predictions.for_queries(post.queries, predict_mean(post.ratings))


@dataclass
class RmseReport:
    rmse: float
    n: int
    buckets: dict[str, float]
    bucket_sizes: dict[str, int]


def rmse(predictions: Predictions, truth: RatingsDataset, train: RatingsDataset | None = None) -> RmseReport:
    """Root mean squared error on exactly the holdout pairs.

    ``train`` supplies user degrees for the cold-start buckets; without it
    the bucket entries are NaN.
    """
    M = truth.num_movies
    pkey = predictions.users * M + predictions.movies
    order = np.argsort(pkey, kind="stable")
    pkey = pkey[order]
    if len(pkey) > 1 and np.any(pkey[1:] == pkey[:-1]):
        raise ValueError("duplicate predictions for a pair")
    tkey = truth.pair_keys()
    if len(pkey) != len(tkey) or not np.array_equal(pkey, tkey):
        missing = np.setdiff1d(tkey, pkey).size
        extra = np.setdiff1d(pkey, tkey).size
        raise ValueError(f"predictions do not match holdout: {missing} missing, {extra} extra")
    err = predictions.values[order] - truth.ratings
    sq = err * err
    total = math.sqrt(float(sq.mean())) if len(sq) else float("nan")
    buckets: dict[str, float] = {}
    sizes: dict[str, int] = {}
    deg = train.user_degrees()[truth.users] if train is not None else None
    for name, rule in DEGREE_BUCKETS:
        if deg is None:
            buckets[name], sizes[name] = float("nan"), 0
            continue
        sel = rule(deg)
        sizes[name] = int(sel.sum())
        buckets[name] = math.sqrt(float(sq[sel].mean())) if sizes[name] else float("nan")
    return RmseReport(total, len(sq), buckets, sizes)


def movie_average_baseline(train: RatingsDataset, queries) -> Predictions:
    """Per-movie training mean; movies without ratings get the global mean."""
    if train.num_edges == 0:
        raise ValueError("no observations")
    q = np.asarray(queries, dtype=np.int64).reshape(-1, 2)
    sums = np.bincount(train.movies, weights=train.ratings.astype(float), minlength=train.num_movies)
    counts = np.bincount(train.movies, minlength=train.num_movies)
    means = np.full(train.num_movies, train.ratings.mean())
    seen = counts > 0
    means[seen] = sums[seen] / counts[seen]
    return Predictions.for_queries(q, clip(means[q[:, 1]], train.r_max))


def kmeans_predict(user_cb: CriticCodebook, movie_cb: CriticCodebook, model: GroupModel, queries) -> Predictions:
    """sum_{u,v} pi_n(u) pi_m(v) Sigma(u, v) from clustering outputs alone."""
    q = np.asarray(queries, dtype=np.int64).reshape(-1, 2)
    sigma = model.conditional_means()
    vals = np.einsum("qu,uv,qv->q", user_cb.memberships[q[:, 0]], sigma, movie_cb.memberships[q[:, 1]])
    return Predictions.for_queries(q, clip(vals, model.r_max))


def kmeans_baseline(
    train: RatingsDataset,
    user_cfg: ClusterConfig,
    movie_cfg: ClusterConfig | None,
    queries,
    smoothing: float = 1.0,
) -> Predictions:
    model, ucb, mcb = cluster_model(train, user_cfg, movie_cfg or user_cfg, smoothing)
    return kmeans_predict(ucb, mcb, model, queries)


@dataclass
class FactorizationView:
    P_U: np.ndarray
    P_V: np.ndarray
    Sigma: np.ndarray

    def dense(self, max_cells: int = 10**6) -> np.ndarray:
        cells = self.P_U.shape[0] * self.P_V.shape[0]
        if cells > max_cells:
            raise ValueError(f"dense estimate has {cells} cells, above the guard of {max_cells}")
        return self.P_U @ self.Sigma @ self.P_V.T


def factorization_view(model: GroupModel, post: PosteriorSet) -> FactorizationView:
    return FactorizationView(post.users.copy(), post.movies.copy(), model.conditional_means())
