"""Pure numpy implementations of the hot loops.

Mirrors ``_kernels.pyx`` argument for argument.  ``W_side`` tables are
indexed ``[rating0, own_group, other_group]`` so one routine serves both the
user-side and the movie-side update.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def _segment_sum(values: np.ndarray, seg: np.ndarray, size: int) -> np.ndarray:
    out = np.empty((size, values.shape[1]))
    for a in range(values.shape[1]):
        out[:, a] = np.bincount(seg, weights=values[:, a], minlength=size)
    return out


def _side_update(owner, size, r0, W, msg_in, msg_old, prior, damping):
    """Leave-one-out product of edge factors for every edge of every node.

    ``owner[e]`` is the node on the updating side that edge ``e`` hangs off.
    Returns (new messages, per-edge max |change|) or raises on underflow.
    """
    E, ga = msg_old.shape
    f = np.zeros((E, ga))
    for r in range(W.shape[0]):
        sel = r0 == r
        if sel.any():
            f[sel] = msg_in[sel] @ W[r].T
    pos = f > 0.0
    with np.errstate(divide="ignore"):
        logf = np.where(pos, np.log(np.where(pos, f, 1.0)), 0.0)
        logp = np.log(prior)
    S = _segment_sum(logf, owner, size)
    Z = _segment_sum((~pos).astype(np.float64), owner, size)
    zc = Z[owner] - (~pos)
    v = S[owner] - logf
    v = np.where((zc > 0) | (prior[owner] <= 0.0), -np.inf, v + np.where(prior[owner] > 0, logp[owner], 0.0))
    mx = v.max(axis=1, keepdims=True)
    if E and np.any(mx == -np.inf):
        bad = int(np.flatnonzero(mx[:, 0] == -np.inf)[0])
        raise FloatingPointError(f"message on edge {bad} underflowed to all zeros")
    buf = np.exp(v - mx)
    buf = buf / buf.sum(axis=1, keepdims=True)
    if damping > 0.0:
        buf = (1.0 - damping) * buf + damping * msg_old
        buf = buf / buf.sum(axis=1, keepdims=True)
    return buf


def update_messages(users, movies, r0, user_ptr, movie_ptr, movie_order,
                    W_user, W_movie, x, y, y0, x0, damping, num_threads=1):
    """One synchronous flooding step; returns (x_new, y_new, delta)."""
    N, M = len(user_ptr) - 1, len(movie_ptr) - 1
    y_new = _side_update(users, N, r0, W_user, x, y, y0, damping)
    x_new = _side_update(movies, M, r0, W_movie, y, x, x0, damping)
    delta = 0.0
    if len(r0):
        delta = max(float(np.abs(y_new - y).max()), float(np.abs(x_new - x).max()))
    return x_new, y_new, delta


def masked_sq_dist(ent_ptr, eidx, coords, ratings, critics):
    """Sum over each entity's observed coordinates of (critic - rating)^2."""
    n_ent = len(ent_ptr) - 1
    e = eidx
    owner = np.repeat(np.arange(n_ent), np.diff(ent_ptr))
    diff = critics[:, coords[e]] - ratings[e]
    out = np.empty((n_ent, critics.shape[0]))
    for k in range(critics.shape[0]):
        out[:, k] = np.bincount(owner, weights=diff[k] ** 2, minlength=n_ent)
    return out


def centroid_sums(coord_ptr, cidx, ents, ratings, memberships, n_coords):
    """Membership-weighted rating sums and weights per (critic, coordinate)."""
    owner = np.repeat(np.arange(n_coords), np.diff(coord_ptr))
    e = cidx
    pi = memberships[ents[e]]
    K = memberships.shape[1]
    num = np.empty((K, n_coords))
    den = np.empty((K, n_coords))
    for k in range(K):
        num[k] = np.bincount(owner, weights=pi[:, k] * ratings[e], minlength=n_coords)
        den[k] = np.bincount(owner, weights=pi[:, k], minlength=n_coords)
    return num, den
