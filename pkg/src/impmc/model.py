"""Group-rating model: priors over user/movie groups and w(r | u, v)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

NORM_TOL = 1e-12


def normalize_rows(a: np.ndarray, axis: int = -1) -> np.ndarray:
    s = a.sum(axis=axis, keepdims=True)
    return a / s


def is_distribution(a: np.ndarray, axis: int = -1, tol: float = NORM_TOL) -> bool:
    a = np.asarray(a, dtype=float)
    return bool(np.all(a >= 0) and np.all(np.abs(a.sum(axis=axis) - 1.0) <= tol))


@dataclass(eq=False)
class GroupModel:
    """Priors ``p_u`` (g_u,), ``p_v`` (g_v,) and the table ``w`` (g_u, g_v, r_max).

    ``w[u, v, r-1]`` is the probability of rating ``r`` given groups (u, v).
    """

    p_u: np.ndarray
    p_v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.p_u = np.asarray(self.p_u, dtype=np.float64)
        self.p_v = np.asarray(self.p_v, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 3 or self.w.shape[:2] != (len(self.p_u), len(self.p_v)):
            raise ValueError(
                f"w has shape {self.w.shape}, expected ({len(self.p_u)}, {len(self.p_v)}, r_max)"
            )

    @property
    def g_u(self) -> int:
        return len(self.p_u)

    @property
    def g_v(self) -> int:
        return len(self.p_v)

    @property
    def r_max(self) -> int:
        return self.w.shape[2]

    def validate(self, tol: float = NORM_TOL) -> None:
        for name, arr in (("p_u", self.p_u), ("p_v", self.p_v), ("w", self.w)):
            if not is_distribution(arr, tol=tol):
                raise ValueError(f"{name} is not a probability vector (or table of them)")

    def conditional_means(self) -> np.ndarray:
        """Sigma(u, v) = sum_r r * w(r | u, v)."""
        return self.w @ np.arange(1, self.r_max + 1, dtype=np.float64)

    def copy(self) -> "GroupModel":
        return GroupModel(self.p_u.copy(), self.p_v.copy(), self.w.copy())

    @classmethod
    def uniform(cls, g_u: int, g_v: int, r_max: int) -> "GroupModel":
        return cls(np.full(g_u, 1.0 / g_u), np.full(g_v, 1.0 / g_v), np.full((g_u, g_v, r_max), 1.0 / r_max))

    @classmethod
    def random(cls, g_u: int, g_v: int, r_max: int, rng: np.random.Generator, concentration: float = 1.0) -> "GroupModel":
        """Dirichlet-distributed priors and slices; used for tests and oracles."""
        return cls(
            rng.dirichlet(np.full(g_u, concentration)),
            rng.dirichlet(np.full(g_v, concentration)),
            rng.dirichlet(np.full(r_max, concentration), size=(g_u, g_v)),
        )

    def permuted(self, user_perm: np.ndarray, movie_perm: np.ndarray) -> "GroupModel":
        """Relabel groups: new group ``i`` is old group ``perm[i]``."""
        return GroupModel(self.p_u[user_perm], self.p_v[movie_perm], self.w[np.ix_(user_perm, movie_perm)])

    # -- text format -------------------------------------------------------

    def save(self, path: str | Path) -> None:
        lines = [f"{self.g_u} {self.g_v} {self.r_max}"]
        for u in range(self.g_u):
            for v in range(self.g_v):
                lines.append(f"{u} {v} " + " ".join(repr(float(x)) for x in self.w[u, v]))
        lines.append("PU " + " ".join(repr(float(x)) for x in self.p_u))
        lines.append("PV " + " ".join(repr(float(x)) for x in self.p_v))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GroupModel":
        rows = [ln.split() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
        if not rows or len(rows[0]) != 3:
            raise ValueError(f"{path}: missing 'gu gv rmax' header")
        g_u, g_v, r_max = (int(t) for t in rows[0])
        w = np.full((g_u, g_v, r_max), np.nan)
        p_u = p_v = None
        for row in rows[1:]:
            if row[0] == "PU":
                p_u = np.array([float(t) for t in row[1:]])
            elif row[0] == "PV":
                p_v = np.array([float(t) for t in row[1:]])
            else:
                u, v = int(row[0]), int(row[1])
                vals = [float(t) for t in row[2:]]
                if len(vals) != r_max:
                    raise ValueError(f"{path}: slice ({u},{v}) has {len(vals)} entries, expected {r_max}")
                w[u, v] = vals
        if p_u is None or p_v is None or np.isnan(w).any():
            raise ValueError(f"{path}: incomplete model file")
        model = cls(p_u, p_v, w)
        model.validate(tol=1e-9)
        return model
