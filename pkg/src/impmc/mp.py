"""Sum-product message passing on the user/movie bipartite graph.

Every observed rating is an edge carrying two messages: ``x[e]`` over movie
groups (movie -> user) and ``y[e]`` over user groups (user -> movie).  A
user's outgoing message on edge ``e`` is its prior times the product, over
its *other* edges ``k``, of ``sum_v w(R_k | u, v) x[k](v)``; movies are
symmetric.  Updates are synchronous and done in the log domain.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import kernels
from .data import RatingsDataset
from .model import GroupModel


class MessageUnderflowError(FloatingPointError):
    """An outgoing message had zero mass before normalization."""


class LeakageError(ValueError):
    """A query pair is part of the training observations."""


@dataclass(frozen=True)
class MpConfig:
    max_iters: int = 50
    tol: float = 1e-6
    damping: float = 0.0
    update_w: bool = False
    init_jitter: float = 0.01
    rng_seed: int = 0
    smoothing: float = 1.0
    threads: int = 1
    backend: str | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if self.init_jitter < 0:
            raise ValueError("init_jitter must be >= 0")


@dataclass
class MessageState:
    x: np.ndarray   # (E, g_v) movie -> user
    y: np.ndarray   # (E, g_u) user -> movie
    x0: np.ndarray  # (M, g_v)
    y0: np.ndarray  # (N, g_u)
    iteration: int = 0

    def copy(self) -> "MessageState":
        return MessageState(self.x.copy(), self.y.copy(), self.x0.copy(), self.y0.copy(), self.iteration)

    def save(self, path) -> None:
        np.savez(path, x=self.x, y=self.y, x0=self.x0, y0=self.y0, iteration=self.iteration)

    @classmethod
    def load(cls, path) -> "MessageState":
        with np.load(path) as z:
            return cls(z["x"], z["y"], z["x0"], z["y0"], int(z["iteration"]))


@dataclass
class Trace:
    deltas: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.deltas)

    def rows(self, with_time: bool = True):
        for i, (d, s) in enumerate(zip(self.deltas, self.seconds), 1):
            yield (i, repr(d), repr(s) if with_time else "")


@dataclass
class PosteriorSet:
    queries: np.ndarray  # (Q, 2) user, movie
    ratings: np.ndarray  # (Q, r_max)
    users: np.ndarray    # (N, g_u)
    movies: np.ndarray   # (M, g_v)


def _check_dims(data: RatingsDataset, model: GroupModel) -> None:
    if model.r_max != data.r_max:
        raise ValueError(f"model r_max {model.r_max} does not match data r_max {data.r_max}")


def _side_tables(model: GroupModel) -> tuple[np.ndarray, np.ndarray]:
    # W_user[r, u, v] and W_movie[r, v, u]
    w_user = np.ascontiguousarray(model.w.transpose(2, 0, 1))
    w_movie = np.ascontiguousarray(model.w.transpose(2, 1, 0))
    return w_user, w_movie


def init_messages(data: RatingsDataset, model: GroupModel, cfg: MpConfig) -> MessageState:
    _check_dims(data, model)
    rng = np.random.default_rng(cfg.rng_seed)
    E = data.num_edges
    x = np.tile(model.p_v, (E, 1))
    y = np.tile(model.p_u, (E, 1))
    if cfg.init_jitter > 0:
        x *= 1.0 + cfg.init_jitter * rng.uniform(-1.0, 1.0, size=x.shape)
        y *= 1.0 + cfg.init_jitter * rng.uniform(-1.0, 1.0, size=y.shape)
        x /= x.sum(axis=1, keepdims=True)
        y /= y.sum(axis=1, keepdims=True)
    x0 = np.tile(model.p_v, (data.num_movies, 1))
    y0 = np.tile(model.p_u, (data.num_users, 1))
    return MessageState(x, y, x0, y0, 0)


def iterate(
    state: MessageState, data: RatingsDataset, model: GroupModel, cfg: MpConfig
) -> tuple[MessageState, float]:
    if state.x.shape[0] != data.num_edges:
        raise ValueError("message state and dataset have different edge sets")
    be = kernels.get_backend(cfg.backend)
    w_user, w_movie = _side_tables(model)
    try:
        x, y, delta = be.update_messages(
            data.users, data.movies, data.ratings - 1, data.user_ptr, data.movie_ptr,
            data.movie_order, w_user, w_movie, state.x, state.y, state.y0, state.x0,
            float(cfg.damping), int(cfg.threads),
        )
    except FloatingPointError as exc:
        raise MessageUnderflowError(
            f"{exc}; a zero-probability w slice is blocking the update (use smoothing > 0)"
        ) from None
    return MessageState(x, y, state.x0, state.y0, state.iteration + 1), delta


def edge_beliefs(state: MessageState, data: RatingsDataset, model: GroupModel) -> np.ndarray:
    """Joint (u, v) belief on every observed edge, shape (E, g_u, g_v)."""
    b = state.y[:, :, None] * model.w[:, :, data.ratings - 1].transpose(2, 0, 1) * state.x[:, None, :]
    return b / b.sum(axis=(1, 2), keepdims=True)


def reestimate_w(state: MessageState, data: RatingsDataset, model: GroupModel, smoothing: float) -> GroupModel:
    """Smoothed soft counts of each rating under the edge beliefs."""
    b = edge_beliefs(state, data, model)
    counts = np.zeros_like(model.w)
    for r in range(1, model.r_max + 1):
        sel = data.ratings == r
        if sel.any():
            counts[:, :, r - 1] = b[sel].sum(axis=0)
    w = counts + smoothing
    tot = w.sum(axis=2, keepdims=True)
    w = np.where(tot > 0, w / np.where(tot > 0, tot, 1.0), 1.0 / model.r_max)
    return GroupModel(model.p_u.copy(), model.p_v.copy(), w)


def run(
    data: RatingsDataset,
    model: GroupModel,
    cfg: MpConfig,
    callback=None,
) -> tuple[MessageState, GroupModel, Trace]:
    """Iterate to ``tol`` (L-inf message change) or ``max_iters``.

    ``callback(state, model)`` is invoked after every iteration.
    """
    state = init_messages(data, model, cfg)
    trace = Trace()
    t0 = time.perf_counter()
    for _ in range(cfg.max_iters):
        state, delta = iterate(state, data, model, cfg)
        if cfg.update_w:
            model = reestimate_w(state, data, model, cfg.smoothing)
        trace.deltas.append(delta)
        trace.seconds.append(time.perf_counter() - t0)
        if callback is not None:
            callback(state, model)
        if delta < cfg.tol:
            break
    return state, model, trace


def node_beliefs(state: MessageState, data: RatingsDataset, model: GroupModel) -> tuple[np.ndarray, np.ndarray]:
    """Group posteriors of every user and movie from all incoming messages."""
    N, M = data.num_users, data.num_movies
    f_user = np.empty((data.num_edges, model.g_u))
    f_movie = np.empty((data.num_edges, model.g_v))
    for r in range(1, model.r_max + 1):
        sel = data.ratings == r
        if sel.any():
            f_user[sel] = state.x[sel] @ model.w[:, :, r - 1].T
            f_movie[sel] = state.y[sel] @ model.w[:, :, r - 1]
    return (
        _log_product(state.y0, f_user, data.users, N),
        _log_product(state.x0, f_movie, data.movies, M),
    )


def _log_product(prior: np.ndarray, factors: np.ndarray, owner: np.ndarray, size: int) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logf = np.log(factors)
        logb = np.log(prior).copy()
    for a in range(prior.shape[1]):
        logb[:, a] += np.bincount(owner, weights=logf[:, a], minlength=size)
    logb = np.nan_to_num(logb, nan=-np.inf)
    mx = logb.max(axis=1, keepdims=True)
    if np.any(mx == -np.inf):
        raise MessageUnderflowError("a node belief has zero mass")
    b = np.exp(logb - mx)
    return b / b.sum(axis=1, keepdims=True)


def _as_queries(queries) -> np.ndarray:
    q = np.asarray(queries, dtype=np.int64)
    return q.reshape(-1, 2)


def rating_posteriors(user_b: np.ndarray, movie_b: np.ndarray, model: GroupModel, q: np.ndarray) -> np.ndarray:
    p = np.einsum("qu,uvr,qv->qr", user_b[q[:, 0]], model.w, movie_b[q[:, 1]])
    return p / p.sum(axis=1, keepdims=True)


PAIR_MODES = ("factorized", "conditioned")


def component_labels(data: RatingsDataset) -> tuple[np.ndarray, np.ndarray]:
    """Connected component of every user and movie in the rating graph."""
    N, M = data.num_users, data.num_movies
    adj = coo_matrix((np.ones(data.num_edges), (data.users, N + data.movies)), shape=(N + M, N + M))
    _, labels = connected_components(adj, directed=False)
    return labels[:N], labels[N:]


def _conditioned_pairs(state, data, model, cfg, q, user_b, movie_b, out) -> None:
    """Overwrite rows of ``out`` for pairs whose user and movie share a component.

    For each user group u the user's prior is clamped to u and message
    passing is rerun from ``state``; the resulting movie beliefs are
    p(V_m | U_n = u, R_O).  On a tree this gives the exact joint of
    (U_n, V_m) and therefore the exact rating distribution.
    """
    cu, cm = component_labels(data)
    same = np.flatnonzero(cu[q[:, 0]] == cm[q[:, 1]])
    for n in np.unique(q[same, 0]):
        rows = same[q[same, 0] == n]
        movies = q[rows, 1]
        joint = np.zeros((len(rows), model.g_u, model.g_v))
        for u in range(model.g_u):
            if user_b[n, u] <= 0.0:
                continue
            y0 = state.y0.copy()
            y0[n] = 0.0
            y0[n, u] = 1.0
            st = MessageState(state.x, state.y, state.x0, y0, 0)
            for _ in range(cfg.max_iters):
                st, delta = iterate(st, data, model, cfg)
                if delta < cfg.tol:
                    break
            _, mb = node_beliefs(st, data, model)
            joint[:, u, :] = user_b[n, u] * mb[movies]
        p = np.einsum("quv,uvr->qr", joint, model.w)
        out[rows] = p / p.sum(axis=1, keepdims=True)


def posteriors(
    state: MessageState, data: RatingsDataset, model: GroupModel, queries,
    pairs: str = "factorized", cfg: MpConfig | None = None,
) -> PosteriorSet:
    """Rating distributions for unobserved pairs plus all group posteriors.

    ``pairs="factorized"`` combines the two node beliefs independently.
    ``pairs="conditioned"`` accounts for the dependence between a user and a
    movie in the same component by clamping the user's group (``cfg`` sets
    the rerun's stopping rule); it costs g_u extra runs per distinct user.
    """
    if pairs not in PAIR_MODES:
        raise ValueError(f"pairs must be one of {PAIR_MODES}, got {pairs!r}")
    q = _as_queries(queries)
    if len(q):
        if q[:, 0].min() < 0 or q[:, 0].max() >= data.num_users or q[:, 1].min() < 0 or q[:, 1].max() >= data.num_movies:
            raise IndexError("query index out of range")
        hit = data.contains(q[:, 0], q[:, 1])
        if hit.any():
            n, m = q[np.flatnonzero(hit)[0]]
            raise LeakageError(
                f"query pair ({data.user_ids[n]}, {data.movie_ids[m]}) is in the training set"
            )
    ub, mb = node_beliefs(state, data, model)
    rp = rating_posteriors(ub, mb, model, q)
    if pairs == "conditioned" and len(q):
        _conditioned_pairs(state, data, model, cfg or MpConfig(), q, ub, mb, rp)
    return PosteriorSet(q, rp, ub, mb)


def exact_oracle(data: RatingsDataset, model: GroupModel, queries, max_states: float = 1e7) -> PosteriorSet:
    """Posteriors by enumerating every joint group assignment.

    The joint over (U_1..U_N, V_1..V_M) is a dense tensor with one axis per
    entity; observations multiply in their w(R | U_n, V_m) factor.
    """
    _check_dims(data, model)
    N, M = data.num_users, data.num_movies
    gu, gv = model.g_u, model.g_v
    if float(gu) ** N * float(gv) ** M > max_states:
        raise ValueError(f"instance too large for enumeration: {gu}^{N} * {gv}^{M} > {max_states:g}")
    q = _as_queries(queries)
    shape = (gu,) * N + (gv,) * M
    ndim = N + M
    with np.errstate(divide="ignore"):
        logj = np.zeros(shape)
        lpu, lpv = np.log(model.p_u), np.log(model.p_v)
        lw = np.log(model.w)

        def axis_shape(axes, sizes):
            s = [1] * ndim
            for a, k in zip(axes, sizes):
                s[a] = k
            return s

        for n in range(N):
            logj = logj + lpu.reshape(axis_shape([n], [gu]))
        for m in range(M):
            logj = logj + lpv.reshape(axis_shape([N + m], [gv]))
        for n, m, r in data.triples():
            logj = logj + lw[:, :, r - 1].reshape(axis_shape([n, N + m], [gu, gv]))
    mx = logj.max()
    if mx == -np.inf:
        raise ValueError("observations have zero probability under the model")
    joint = np.exp(logj - mx)
    joint /= joint.sum()

    users = np.empty((N, gu))
    movies = np.empty((M, gv))
    for n in range(N):
        users[n] = joint.sum(axis=tuple(a for a in range(ndim) if a != n))
    for m in range(M):
        movies[m] = joint.sum(axis=tuple(a for a in range(ndim) if a != N + m))
    rp = np.empty((len(q), model.r_max))
    for i, (n, m) in enumerate(q):
        pair = joint.sum(axis=tuple(a for a in range(ndim) if a not in (n, N + m)))
        rp[i] = np.einsum("uv,uvr->r", pair, model.w)
    return PosteriorSet(q, rp, users, movies)
