"""Sampling rating matrices from the group model, with ground-truth groups."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .data import RatingsDataset
from .model import GroupModel


@dataclass(frozen=True)
class SynthSpec:
    num_users: int
    num_movies: int
    model: GroupModel
    sampling: str = "fixed_degree"
    degree: int | None = None
    obs_per_user: float | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.sampling == "fixed_degree":
            if self.degree is None:
                raise ValueError("fixed_degree sampling needs a degree")
            if self.degree > self.num_movies:
                raise ValueError(f"degree {self.degree} exceeds the number of movies {self.num_movies}")
            if self.degree < 0:
                raise ValueError("degree must be >= 0")
        elif self.sampling == "bernoulli":
            if self.obs_per_user is None or not 0 <= self.obs_per_user <= self.num_movies:
                raise ValueError("bernoulli sampling needs 0 <= obs_per_user <= num_movies")
        else:
            raise ValueError(f"unknown sampling {self.sampling!r}")
        self.model.validate(tol=1e-9)


def generate(spec: SynthSpec) -> tuple[RatingsDataset, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(spec.rng_seed)
    model = spec.model
    N, M = spec.num_users, spec.num_movies
    ug = rng.choice(model.g_u, size=N, p=model.p_u)
    vg = rng.choice(model.g_v, size=M, p=model.p_v)

    users, movies = [], []
    for n in range(N):
        if spec.sampling == "fixed_degree":
            k = spec.degree
        else:
            k = rng.binomial(M, spec.obs_per_user / M) if M else 0
        picked = np.sort(rng.choice(M, size=k, replace=False))
        users.append(np.full(k, n, dtype=np.int64))
        movies.append(picked)
    u = np.concatenate(users) if users else np.zeros(0, np.int64)
    m = np.concatenate(movies) if movies else np.zeros(0, np.int64)

    cdf = np.cumsum(model.w[ug[u], vg[m]], axis=1)
    draw = rng.random(len(u))
    r = np.minimum((draw[:, None] >= cdf).sum(axis=1), model.r_max - 1) + 1
    data = RatingsDataset.from_arrays(
        u, m, r, N, M, model.r_max,
        [f"u{n}" for n in range(N)], [f"m{j}" for j in range(M)],
    )
    return data, ug, vg


def _discrete_gaussian(center: float, spread: float, r_max: int) -> np.ndarray:
    r = np.arange(1, r_max + 1, dtype=np.float64)
    logits = -((r - center) ** 2) / (2 * spread**2)
    p = np.exp(logits - logits.max())
    return p / p.sum()


def _slice_with_mean(mean: float, spread: float, r_max: int) -> np.ndarray:
    """Discretized Gaussian over [r_max] whose conditional mean equals ``mean``."""
    r = np.arange(1, r_max + 1, dtype=np.float64)
    center = brentq(lambda c: _discrete_gaussian(c, spread, r_max) @ r - mean, -10.0 * r_max, 11.0 * r_max)
    return _discrete_gaussian(center, spread, r_max)


def separated_model(
    g_u: int,
    g_v: int,
    r_max: int = 5,
    low: float = 1.5,
    high: float = 4.5,
    spread: float = 0.5,
) -> GroupModel:
    """Uniform priors and discretized-Gaussian slices with Latin-square means.

    Group pair (u, v) has conditional mean ``levels[(u + v) % L]``, with
    ``L = max(g_u, g_v)`` levels evenly spaced over [low, high].  Every user
    group ranks the movie groups differently, so movie averages carry little
    of the structure.
    """
    if not 1 < low <= high < r_max:
        raise ValueError(f"conditional means must lie strictly inside (1, {r_max})")
    L = max(g_u, g_v)
    levels = np.linspace(low, high, L) if L > 1 else np.array([(low + high) / 2])
    w = np.empty((g_u, g_v, r_max))
    for u in range(g_u):
        for v in range(g_v):
            w[u, v] = _slice_with_mean(levels[(u + v) % L], spread, r_max)
    return GroupModel(np.full(g_u, 1.0 / g_u), np.full(g_v, 1.0 / g_v), w)


def point_mass_model(g_u: int, g_v: int, r_max: int, rating: int) -> GroupModel:
    if not 1 <= rating <= r_max:
        raise ValueError(f"point-mass rating {rating} outside [1, {r_max}]")
    w = np.zeros((g_u, g_v, r_max))
    w[:, :, rating - 1] = 1.0
    return GroupModel(np.full(g_u, 1.0 / g_u), np.full(g_v, 1.0 / g_v), w)


@dataclass
class BlockHistograms:
    counts: np.ndarray  # (g_u, g_v, r_max)

    @property
    def empty(self) -> np.ndarray:
        return self.counts.sum(axis=2) == 0

    @property
    def freqs(self) -> np.ndarray:
        tot = self.counts.sum(axis=2, keepdims=True)
        return np.divide(self.counts, tot, out=np.zeros_like(self.counts, dtype=float), where=tot > 0)


def empirical_block_histograms(
    data: RatingsDataset, user_groups: np.ndarray, movie_groups: np.ndarray,
    g_u: int | None = None, g_v: int | None = None,
) -> BlockHistograms:
    user_groups = np.asarray(user_groups)
    movie_groups = np.asarray(movie_groups)
    g_u = g_u or int(user_groups.max()) + 1
    g_v = g_v or int(movie_groups.max()) + 1
    counts = np.zeros((g_u, g_v, data.r_max))
    np.add.at(counts, (user_groups[data.users], movie_groups[data.movies], data.ratings - 1), 1.0)
    return BlockHistograms(counts)


def save_groups(ids, groups, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        for key, g in zip(ids, groups):
            f.write(f"{key}\t{int(g)}\n")
