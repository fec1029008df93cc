"""Sparse discrete rating matrices and the bipartite views over them.

A :class:`RatingsDataset` stores the observed set as three parallel arrays
sorted by (user, movie).  The user-side adjacency is the CSR layout of those
arrays; the movie-side adjacency is a permutation of edge indices sorted by
(movie, user).  Every module that walks the user/movie graph uses these two
views, so edge ``e`` means the same observation everywhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

DEFAULT_RMAX = 5
_SEPARATORS = {"tsv": "\t", "csv": ","}


class RatingsFormatError(ValueError):
    """Raised for malformed or inconsistent ratings input."""


@dataclass(frozen=True, eq=False)
class RatingsDataset:
    num_users: int
    num_movies: int
    r_max: int
    users: np.ndarray
    movies: np.ndarray
    ratings: np.ndarray
    user_ids: tuple[str, ...]
    movie_ids: tuple[str, ...]
    user_ptr: np.ndarray = field(init=False, repr=False)
    movie_ptr: np.ndarray = field(init=False, repr=False)
    movie_order: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        # Callers go through from_arrays, which sorts and validates.
        set_ = object.__setattr__
        set_(self, "user_ptr", _csr_ptr(self.users, self.num_users))
        order = np.lexsort((self.users, self.movies))
        set_(self, "movie_order", order.astype(np.int64))
        set_(self, "movie_ptr", _csr_ptr(self.movies[order], self.num_movies))
        for name in ("users", "movies", "ratings", "user_ptr", "movie_ptr", "movie_order"):
            getattr(self, name).setflags(write=False)

    @classmethod
    def from_arrays(
        cls,
        users: Sequence[int] | np.ndarray,
        movies: Sequence[int] | np.ndarray,
        ratings: Sequence[int] | np.ndarray,
        num_users: int | None = None,
        num_movies: int | None = None,
        r_max: int = DEFAULT_RMAX,
        user_ids: Sequence[str] | None = None,
        movie_ids: Sequence[str] | None = None,
    ) -> "RatingsDataset":
        """Build a dataset from index triples, sorting into canonical edge order."""
        u = np.asarray(users, dtype=np.int64).ravel()
        m = np.asarray(movies, dtype=np.int64).ravel()
        r = np.asarray(ratings, dtype=np.int64).ravel()
        if not (len(u) == len(m) == len(r)):
            raise ValueError("users, movies and ratings must have equal length")
        if num_users is None:
            num_users = int(u.max()) + 1 if len(u) else 0
        if num_movies is None:
            num_movies = int(m.max()) + 1 if len(m) else 0
        if len(u):
            if u.min() < 0 or u.max() >= num_users:
                raise ValueError("user index out of range")
            if m.min() < 0 or m.max() >= num_movies:
                raise ValueError("movie index out of range")
            if r.min() < 1 or r.max() > r_max:
                raise ValueError(f"rating outside [1, {r_max}]")
        order = np.lexsort((m, u))
        u, m, r = u[order], m[order], r[order]
        if len(u) > 1:
            dup = (np.diff(u) == 0) & (np.diff(m) == 0)
            if dup.any():
                i = int(np.flatnonzero(dup)[0])
                raise ValueError(f"duplicate observation for pair ({u[i]}, {m[i]})")
        if user_ids is None:
            user_ids = [str(i) for i in range(num_users)]
        if movie_ids is None:
            movie_ids = [str(i) for i in range(num_movies)]
        if len(user_ids) != num_users or len(movie_ids) != num_movies:
            raise ValueError("id maps do not match entity counts")
        return cls(
            int(num_users), int(num_movies), int(r_max), u, m, r,
            tuple(user_ids), tuple(movie_ids),
        )

    def __len__(self) -> int:
        return len(self.ratings)

    @property
    def num_edges(self) -> int:
        return len(self.ratings)

    def user_degrees(self) -> np.ndarray:
        return np.diff(self.user_ptr)

    def movie_degrees(self) -> np.ndarray:
        return np.diff(self.movie_ptr)

    def by_user(self, n: int) -> list[tuple[int, int]]:
        lo, hi = self.user_ptr[n], self.user_ptr[n + 1]
        return list(zip(self.movies[lo:hi].tolist(), self.ratings[lo:hi].tolist()))

    def by_movie(self, m: int) -> list[tuple[int, int]]:
        idx = self.movie_order[self.movie_ptr[m]:self.movie_ptr[m + 1]]
        return list(zip(self.users[idx].tolist(), self.ratings[idx].tolist()))

    def triples(self) -> Iterator[tuple[int, int, int]]:
        return zip(self.users.tolist(), self.movies.tolist(), self.ratings.tolist())

    def pair_keys(self) -> np.ndarray:
        """Sorted int64 keys ``n * M + m``; sorted because edges are."""
        return self.users * self.num_movies + self.movies

    def contains(self, users: np.ndarray, movies: np.ndarray) -> np.ndarray:
        """Vectorized membership test for (user, movie) pairs in O."""
        keys = self.pair_keys()
        q = np.asarray(users, dtype=np.int64) * self.num_movies + np.asarray(movies, dtype=np.int64)
        if len(keys) == 0:
            return np.zeros(q.shape, dtype=bool)
        pos = np.clip(np.searchsorted(keys, q), 0, len(keys) - 1)
        return keys[pos] == q

    def subset(self, edges: np.ndarray) -> "RatingsDataset":
        """Observations at the given edge indices, same entities and id maps."""
        edges = np.asarray(edges, dtype=np.int64)
        return RatingsDataset.from_arrays(
            self.users[edges], self.movies[edges], self.ratings[edges],
            self.num_users, self.num_movies, self.r_max, self.user_ids, self.movie_ids,
        )

    def extended(self, user_ids: Sequence[str], movie_ids: Sequence[str]) -> "RatingsDataset":
        """Same observations over a larger entity set; existing ids must be a prefix."""
        if tuple(user_ids[: self.num_users]) != self.user_ids or tuple(movie_ids[: self.num_movies]) != self.movie_ids:
            raise ValueError("extended id maps must keep the existing ids as a prefix")
        return RatingsDataset.from_arrays(
            self.users, self.movies, self.ratings, len(user_ids), len(movie_ids),
            self.r_max, user_ids, movie_ids,
        )

    def same_as(self, other: "RatingsDataset") -> bool:
        return (
            self.num_users == other.num_users
            and self.num_movies == other.num_movies
            and self.r_max == other.r_max
            and self.user_ids == other.user_ids
            and self.movie_ids == other.movie_ids
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.movies, other.movies)
            and np.array_equal(self.ratings, other.ratings)
        )


def _csr_ptr(sorted_index: np.ndarray, size: int) -> np.ndarray:
    counts = np.bincount(sorted_index, minlength=size) if len(sorted_index) else np.zeros(size, np.int64)
    ptr = np.zeros(size + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr


class IdIndex:
    """First-appearance dense index over arbitrary string ids."""

    def __init__(self, ids: Iterable[str] = ()):
        self.ids: list[str] = []
        self._pos: dict[str, int] = {}
        for i in ids:
            self.add(i)

    def add(self, key: str) -> int:
        pos = self._pos.get(key)
        if pos is None:
            pos = self._pos[key] = len(self.ids)
            self.ids.append(key)
        return pos

    def get(self, key: str) -> int | None:
        return self._pos.get(key)

    def __len__(self) -> int:
        return len(self.ids)


def _fmt_of(path: Path, fmt: str | None) -> str:
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "tsv"
    if fmt not in _SEPARATORS:
        raise ValueError(f"unknown ratings format {fmt!r}")
    return fmt


def _read_rows(path: Path, fmt: str, ncols: int) -> Iterator[tuple[int, list[str]]]:
    sep = _SEPARATORS[fmt]
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(sep)]
            if len(parts) < ncols:
                raise RatingsFormatError(f"{path}:{lineno}: expected {ncols} fields, got {len(parts)}")
            yield lineno, parts


def load_ratings(
    path: str | Path,
    fmt: str | None = None,
    r_max: int = DEFAULT_RMAX,
    user_index: IdIndex | None = None,
    movie_index: IdIndex | None = None,
) -> RatingsDataset:
    """Read ``user SEP movie SEP rating`` lines into a densely indexed dataset.

    Ids are indexed in first-appearance order, after any ids already present
    in ``user_index`` / ``movie_index`` (used to reload with a saved id map).
    """
    path = Path(path)
    fmt = _fmt_of(path, fmt)
    users_ix = user_index if user_index is not None else IdIndex()
    movies_ix = movie_index if movie_index is not None else IdIndex()
    seen: dict[tuple[int, int], int] = {}
    u, m, r = [], [], []
    for lineno, parts in _read_rows(path, fmt, 3):
        try:
            value = int(parts[2])
        except ValueError:
            try:
                fv = float(parts[2])
            except ValueError:
                raise RatingsFormatError(f"{path}:{lineno}: cannot parse rating {parts[2]!r}") from None
            if not fv.is_integer():
                raise RatingsFormatError(f"{path}:{lineno}: rating {parts[2]!r} is not an integer")
            value = int(fv)
        if not 1 <= value <= r_max:
            raise RatingsFormatError(f"{path}:{lineno}: rating {value} outside [1, {r_max}]")
        n, mm = users_ix.add(parts[0]), movies_ix.add(parts[1])
        if (n, mm) in seen:
            raise RatingsFormatError(
                f"{path}:{lineno}: duplicate pair ({parts[0]}, {parts[1]}), first seen on line {seen[n, mm]}"
            )
        seen[n, mm] = lineno
        u.append(n)
        m.append(mm)
        r.append(value)
    if not r:
        raise RatingsFormatError(f"{path}: no observations")
    return RatingsDataset.from_arrays(
        u, m, r, len(users_ix), len(movies_ix), r_max, users_ix.ids, movies_ix.ids
    )


def load_pairs(
    path: str | Path, user_index: IdIndex, movie_index: IdIndex, fmt: str | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Read ``user SEP movie [SEP ...]`` query lines; unseen ids are appended to the indexes."""
    path = Path(path)
    fmt = _fmt_of(path, fmt)
    u, m = [], []
    for _, parts in _read_rows(path, fmt, 2):
        u.append(user_index.add(parts[0]))
        m.append(movie_index.add(parts[1]))
    return np.asarray(u, dtype=np.int64), np.asarray(m, dtype=np.int64)


def save_ratings(data: RatingsDataset, path: str | Path, fmt: str | None = None) -> None:
    path = Path(path)
    sep = _SEPARATORS[_fmt_of(path, fmt)]
    uid, mid = data.user_ids, data.movie_ids
    with open(path, "w", encoding="utf-8", newline="") as f:
        for n, m, r in data.triples():
            f.write(f"{uid[n]}{sep}{mid[m]}{sep}{r}\n")


def save_id_map(ids: Sequence[str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        for i, key in enumerate(ids):
            f.write(f"{i}\t{key}\n")


def load_id_map(path: str | Path) -> IdIndex:
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            idx, _, key = line.partition("\t")
            if int(idx) != len(rows):
                raise RatingsFormatError(f"{path}:{lineno}: id map is not dense and ordered")
            rows.append(key)
    return IdIndex(rows)


def save_dataset(data: RatingsDataset, directory: str | Path, stem: str = "ratings") -> None:
    """Write ``<stem>.tsv`` plus the ``users.tsv`` / ``movies.tsv`` id maps."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_ratings(data, directory / f"{stem}.tsv")
    save_id_map(data.user_ids, directory / "users.tsv")
    save_id_map(data.movie_ids, directory / "movies.tsv")


def load_dataset(directory: str | Path, stem: str = "ratings", r_max: int = DEFAULT_RMAX) -> RatingsDataset:
    directory = Path(directory)
    return load_ratings(
        directory / f"{stem}.tsv", "tsv", r_max,
        load_id_map(directory / "users.tsv"), load_id_map(directory / "movies.tsv"),
    )


# --------------------------------------------------------------------------
# holdout splitting


@dataclass(frozen=True)
class SplitSpec:
    holdout_size: int | None = 1000
    rng_seed: int = 0
    mode: str = "uniform_pairs"
    cap: int | None = None

    def __post_init__(self):
        if self.mode not in ("uniform_pairs", "per_user_cap"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if self.mode == "per_user_cap" and (self.cap is None or self.cap < 0):
            raise ValueError("per_user_cap mode needs a nonnegative cap")
        if self.mode == "uniform_pairs" and self.holdout_size is None:
            raise ValueError("uniform_pairs mode needs a holdout_size")


def split_holdout(data: RatingsDataset, spec: SplitSpec) -> tuple[RatingsDataset, RatingsDataset]:
    """Partition O into (train, holdout) over the same entities and id maps.

    In ``per_user_cap`` mode each user keeps ``min(cap, degree)`` uniformly
    chosen observations; the rest are held out, subsampled uniformly down to
    ``holdout_size`` when that is set (the surplus is then dropped).
    """
    rng = np.random.default_rng(spec.rng_seed)
    E = data.num_edges
    if spec.mode == "uniform_pairs":
        if spec.holdout_size >= E:
            raise ValueError(f"holdout_size {spec.holdout_size} must be < |O| = {E}")
        held = np.sort(rng.choice(E, size=spec.holdout_size, replace=False))
        keep = np.setdiff1d(np.arange(E), held, assume_unique=True)
        return data.subset(keep), data.subset(held)

    keep_parts = []
    ptr = data.user_ptr
    for n in range(data.num_users):
        lo, hi = int(ptr[n]), int(ptr[n + 1])
        deg = hi - lo
        if deg <= spec.cap:
            keep_parts.append(np.arange(lo, hi))
        else:
            keep_parts.append(lo + rng.choice(deg, size=spec.cap, replace=False))
    keep = np.sort(np.concatenate(keep_parts)) if keep_parts else np.zeros(0, np.int64)
    rest = np.setdiff1d(np.arange(E), keep, assume_unique=True)
    if spec.holdout_size is not None and len(rest) > spec.holdout_size:
        rest = np.sort(rng.choice(rest, size=spec.holdout_size, replace=False))
    return data.subset(keep), data.subset(rest)


def cold_start_split(
    data: RatingsDataset, cap: int, holdout_size: int | None, seed: int, order: str = "after"
) -> tuple[RatingsDataset, RatingsDataset]:
    """Train/validation split for one point of the observations-per-user sweep.

    ``order="after"`` caps users first and draws validation pairs from the
    remainder; ``order="before"`` draws ``holdout_size`` uniform pairs from O
    first and then caps the remaining observations per user.
    """
    if order == "after":
        return split_holdout(data, SplitSpec(holdout_size, seed, "per_user_cap", cap))
    if order == "before":
        if holdout_size is None:
            raise ValueError("order='before' needs a holdout_size")
        rest, held = split_holdout(data, SplitSpec(holdout_size, seed, "uniform_pairs"))
        train, _ = split_holdout(rest, SplitSpec(None, seed + 1, "per_user_cap", cap))
        return train, held
    raise ValueError(f"unknown split order {order!r}")


# --------------------------------------------------------------------------
# degree statistics


@dataclass(frozen=True)
class DegreeStats:
    user_degrees: np.ndarray
    movie_degrees: np.ndarray

    def _side(self, side: str) -> np.ndarray:
        if side in ("users", "user"):
            return self.user_degrees
        if side in ("movies", "movie"):
            return self.movie_degrees
        raise ValueError(f"unknown side {side!r}")

    def minimum(self, side: str) -> int:
        d = self._side(side)
        return int(d.min()) if len(d) else 0

    def maximum(self, side: str) -> int:
        d = self._side(side)
        return int(d.max()) if len(d) else 0

    def mean(self, side: str) -> float:
        d = self._side(side)
        return float(d.mean()) if len(d) else 0.0

    def fraction_below(self, t: int, side: str = "users") -> float:
        d = self._side(side)
        return float(np.count_nonzero(d < t)) / len(d) if len(d) else 0.0

    def summary(self, thresholds: Sequence[int] = (3, 5, 10)) -> dict[str, float]:
        out: dict[str, float] = {}
        for side in ("users", "movies"):
            out[f"{side}_count"] = len(self._side(side))
            out[f"{side}_min"] = self.minimum(side)
            out[f"{side}_mean"] = self.mean(side)
            out[f"{side}_max"] = self.maximum(side)
            for t in thresholds:
                out[f"{side}_frac_below_{t}"] = self.fraction_below(t, side)
        return out


def degree_stats(data: RatingsDataset) -> DegreeStats:
    return DegreeStats(data.user_degrees().copy(), data.movie_degrees().copy())


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
