"""Critic-codebook clustering used to initialize the group-rating model.

Users (or movies) are clustered against ``K`` dense "critic" vectors with a
distance computed only over the coordinates the entity actually rated.  The
codebook grows by doubling: every critic is copied and a perturbed twin is
appended, then ``J`` rounds of nearest-neighbour / centroid updates run at
the new size.  Once both sides are clustered, ``estimate_w`` turns the two
membership matrices into soft rating frequencies per group pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .data import RatingsDataset
from .model import GroupModel

SIDES = ("users", "movies")


@dataclass(frozen=True)
class ClusterConfig:
    target_groups: int = 4
    inner_iters: int = 10
    beta: float = math.inf
    split_noise_sigma: float | None = None
    rng_seed: int = 0

    def __post_init__(self):
        g = self.target_groups
        if g < 1 or g & (g - 1):
            raise ValueError(f"target_groups must be a power of 2, got {g}")
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.split_noise_sigma is not None and self.split_noise_sigma <= 0:
            raise ValueError("split_noise_sigma must be > 0")

    @property
    def hard(self) -> bool:
        return math.isinf(self.beta)

    def sigma(self, r_max: int) -> float:
        if self.split_noise_sigma is not None:
            return self.split_noise_sigma
        return 0.01 * max(r_max - 1, 1)


@dataclass
class CriticCodebook:
    side: str
    critics: np.ndarray
    memberships: np.ndarray
    r_max: int
    # (split level, inner round, masked distortion) recorded by run_clustering
    history: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def num_critics(self) -> int:
        return self.critics.shape[0]


@dataclass(frozen=True)
class _SideView:
    """Entity-major and coordinate-major walks for one clustering side."""

    ent_ptr: np.ndarray
    ent_eidx: np.ndarray
    coord_ptr: np.ndarray
    coord_eidx: np.ndarray
    ents: np.ndarray
    coords: np.ndarray
    ratings: np.ndarray
    n_ent: int
    n_coord: int


def _view(data: RatingsDataset, side: str) -> _SideView:
    ident = np.arange(data.num_edges, dtype=np.int64)
    r = data.ratings.astype(np.float64)
    if side == "users":
        return _SideView(data.user_ptr, ident, data.movie_ptr, data.movie_order,
                         data.users, data.movies, r, data.num_users, data.num_movies)
    if side == "movies":
        return _SideView(data.movie_ptr, data.movie_order, data.user_ptr, ident,
                         data.movies, data.users, r, data.num_movies, data.num_users)
    raise ValueError(f"side must be one of {SIDES}, got {side!r}")


def init_codebook(data: RatingsDataset, side: str) -> CriticCodebook:
    if data.num_edges == 0:
        raise ValueError("no observations")
    view = _view(data, side)
    sums = np.bincount(view.coords, weights=view.ratings, minlength=view.n_coord)
    counts = np.bincount(view.coords, minlength=view.n_coord)
    critic = np.full(view.n_coord, view.ratings.mean())
    has = counts > 0
    critic[has] = sums[has] / counts[has]
    return CriticCodebook(side, critic[None, :], np.ones((view.n_ent, 1)), data.r_max)


def split_critics(cb: CriticCodebook, sigma: float, seed: int | np.random.Generator) -> CriticCodebook:
    """Double the codebook: critics ``K..2K-1`` are noisy copies of ``0..K-1``."""
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=cb.critics.shape) if sigma > 0 else 0.0
    twins = np.clip(cb.critics + noise, 1.0, cb.r_max)
    half = cb.memberships / 2.0
    return CriticCodebook(
        cb.side, np.vstack([cb.critics, twins]), np.hstack([half, half]), cb.r_max, list(cb.history)
    )


def masked_distances(cb: CriticCodebook, data: RatingsDataset) -> tuple[np.ndarray, np.ndarray]:
    """Squared-error sums over observed coordinates and the entity degrees."""
    view = _view(data, cb.side)
    sq = kernels.backend.masked_sq_dist(view.ent_ptr, view.ent_eidx, view.coords, view.ratings, cb.critics)
    return sq, np.diff(view.ent_ptr)


def soft_assign(cb: CriticCodebook, data: RatingsDataset, beta: float) -> CriticCodebook:
    """Memberships proportional to exp(-beta * masked RMS distance).

    ``beta = inf`` is hard assignment to the nearest critic, lowest index on
    ties.  Entities with no observations get uniform memberships.
    """
    sq, deg = masked_distances(cb, data)
    K = cb.num_critics
    pi = np.full((len(deg), K), 1.0 / K)
    rated = deg > 0
    dist = np.sqrt(sq[rated] / deg[rated, None])
    if math.isinf(beta):
        hard = np.zeros_like(dist)
        hard[np.arange(len(dist)), np.argmin(dist, axis=1)] = 1.0
        pi[rated] = hard
    elif beta == 0:
        pass
    else:
        logits = -beta * (dist - dist.min(axis=1, keepdims=True))
        p = np.exp(logits)
        pi[rated] = p / p.sum(axis=1, keepdims=True)
    return replace(cb, memberships=pi, history=list(cb.history))


def update_critics(cb: CriticCodebook, data: RatingsDataset, min_weight: float = 1e-9) -> CriticCodebook:
    """Membership-weighted centroid of the observed ratings, per coordinate."""
    view = _view(data, cb.side)
    num, den = kernels.backend.centroid_sums(
        view.coord_ptr, view.coord_eidx, view.ents, view.ratings, cb.memberships, view.n_coord
    )
    critics = cb.critics.copy()
    ok = den >= min_weight
    critics[ok] = num[ok] / den[ok]
    np.clip(critics, 1.0, cb.r_max, out=critics)
    return replace(cb, critics=critics, history=list(cb.history))


def masked_distortion(cb: CriticCodebook, data: RatingsDataset) -> float:
    """Total squared error of every observation against its nearest critic.

    Equals sum_n |V_n| * min_u dist(n, u)^2, the quantity the centroid rule
    minimizes for fixed hard assignments.
    """
    sq, deg = masked_distances(cb, data)
    return float(sq[deg > 0].min(axis=1).sum()) if (deg > 0).any() else 0.0


def run_clustering(data: RatingsDataset, cfg: ClusterConfig, side: str) -> CriticCodebook:
    rng = np.random.default_rng([cfg.rng_seed, SIDES.index(side)])
    sigma = cfg.sigma(data.r_max)
    cb = init_codebook(data, side)
    level = 0
    while True:
        cb.history.append((level, 0, masked_distortion(cb, data)))
        for j in range(1, cfg.inner_iters + 1):
            cb = soft_assign(cb, data, cfg.beta)
            cb = update_critics(cb, data)
            cb.history.append((level, j, masked_distortion(cb, data)))
        if cb.num_critics >= cfg.target_groups:
            break
        cb = split_critics(cb, sigma, rng)
        level += 1
    # memberships consistent with the final critics
    return soft_assign(cb, data, cfg.beta)


def estimate_w(
    user_cb: CriticCodebook,
    movie_cb: CriticCodebook,
    data: RatingsDataset,
    smoothing: float = 1.0,
    uniform_priors: bool = False,
) -> GroupModel:
    """Soft rating frequencies per (user group, movie group), Laplace-smoothed."""
    pu, pv = user_cb.memberships, movie_cb.memberships
    counts = soft_counts(pu, pv, data)
    w = counts + smoothing
    tot = w.sum(axis=2, keepdims=True)
    empty = tot[..., 0] <= 0
    w = np.where(empty[..., None], 1.0 / data.r_max, w / np.where(tot > 0, tot, 1.0))
    if uniform_priors:
        p_u = np.full(pu.shape[1], 1.0 / pu.shape[1])
        p_v = np.full(pv.shape[1], 1.0 / pv.shape[1])
    else:
        p_u = pu.sum(axis=0) / pu.shape[0]
        p_v = pv.sum(axis=0) / pv.shape[0]
        p_u /= p_u.sum()
        p_v /= p_v.sum()
    return GroupModel(p_u, p_v, w)


def soft_counts(pu: np.ndarray, pv: np.ndarray, data: RatingsDataset) -> np.ndarray:
    """counts[u, v, r-1] = sum over observations rated r of pi_n(u) * pi_m(v)."""
    counts = np.zeros((pu.shape[1], pv.shape[1], data.r_max))
    for r in range(1, data.r_max + 1):
        sel = data.ratings == r
        if sel.any():
            counts[:, :, r - 1] = pu[data.users[sel]].T @ pv[data.movies[sel]]
    return counts


def cluster_model(
    data: RatingsDataset,
    user_cfg: ClusterConfig,
    movie_cfg: ClusterConfig,
    smoothing: float = 1.0,
    uniform_priors: bool = False,
) -> tuple[GroupModel, CriticCodebook, CriticCodebook]:
    """Cluster both sides and estimate the initial model."""
    ucb = run_clustering(data, user_cfg, "users")
    mcb = run_clustering(data, movie_cfg, "movies")
    return estimate_w(ucb, mcb, data, smoothing, uniform_priors), ucb, mcb


def save_codebook(cb: CriticCodebook, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for k in range(cb.num_critics):
            for c, val in enumerate(cb.critics[k]):
                f.write(f"{k} {c} {float(val)!r}\n")
