"""Random instance generators and a naive reference for the message update."""

from __future__ import annotations

import itertools

import numpy as np

from impmc.data import RatingsDataset
from impmc.model import GroupModel


def random_forest(rng: np.random.Generator, max_nodes: int = 8, r_max: int = 3, p_attach: float = 0.85):
    """Random acyclic user/movie instance with N + M <= max_nodes.

    Nodes arrive in random order; each attaches to at most one earlier node
    of the opposite type, so no cycle can form.
    """
    total = int(rng.integers(3, max_nodes + 1))
    N = int(rng.integers(1, total))
    M = total - N
    kinds = rng.permutation(["u"] * N + ["m"] * M)
    placed = {"u": [], "m": []}
    edges = []
    for kind in kinds:
        idx = len(placed[kind])
        other = "m" if kind == "u" else "u"
        if placed[other] and rng.random() < p_attach:
            j = int(rng.choice(placed[other]))
            edges.append((idx, j) if kind == "u" else (j, idx))
        placed[kind].append(idx)
    users = [e[0] for e in edges]
    movies = [e[1] for e in edges]
    ratings = rng.integers(1, r_max + 1, size=len(edges))
    return RatingsDataset.from_arrays(users, movies, ratings, N, M, r_max)


def random_loopy(rng: np.random.Generator, N: int = 12, M: int = 10, density: float = 0.35, r_max: int = 5):
    mask = rng.random((N, M)) < density
    # guarantee at least one 4-cycle
    mask[:2, :2] = True
    u, m = np.nonzero(mask)
    return RatingsDataset.from_arrays(u, m, rng.integers(1, r_max + 1, size=len(u)), N, M, r_max)


def random_model(rng: np.random.Generator, g_u: int, g_v: int, r_max: int) -> GroupModel:
    return GroupModel.random(g_u, g_v, r_max, rng)


def components(data: RatingsDataset) -> tuple[np.ndarray, np.ndarray]:
    """Connected-component label of every user and movie."""
    N, M = data.num_users, data.num_movies
    parent = list(range(N + M))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for n, m, _ in data.triples():
        parent[find(n)] = find(N + m)
    labels = np.array([find(i) for i in range(N + M)])
    return labels[:N], labels[N:]


def unobserved_pairs(data: RatingsDataset) -> np.ndarray:
    pairs = np.array(list(itertools.product(range(data.num_users), range(data.num_movies))), dtype=np.int64)
    if len(pairs) == 0:
        return pairs.reshape(0, 2)
    return pairs[~data.contains(pairs[:, 0], pairs[:, 1])]


def naive_iterate(data: RatingsDataset, model: GroupModel, x: np.ndarray, y: np.ndarray, damping: float = 0.0):
    """Direct transcription of the synchronous update with plain products."""
    w = model.w
    y_new = np.empty_like(y)
    x_new = np.empty_like(x)
    edges = list(data.triples())
    for e, (n, m, r) in enumerate(edges):
        msg = model.p_u.copy()
        for k, (n2, m2, r2) in enumerate(edges):
            if n2 == n and k != e:
                msg *= np.array([sum(w[u, v, r2 - 1] * x[k, v] for v in range(model.g_v)) for u in range(model.g_u)])
        msg /= msg.sum()
        if damping:
            msg = (1 - damping) * msg + damping * y[e]
            msg /= msg.sum()
        y_new[e] = msg

        msg = model.p_v.copy()
        for k, (n2, m2, r2) in enumerate(edges):
            if m2 == m and k != e:
                msg *= np.array([sum(w[u, v, r2 - 1] * y[k, u] for u in range(model.g_u)) for v in range(model.g_v)])
        msg /= msg.sum()
        if damping:
            msg = (1 - damping) * msg + damping * x[e]
            msg /= msg.sum()
        x_new[e] = msg
    return x_new, y_new
