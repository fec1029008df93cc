"""Clustering-initialized message passing for sparse rating matrix completion."""

from .data import (
    DegreeStats,
    RatingsDataset,
    SplitSpec,
    degree_stats,
    load_ratings,
    save_ratings,
    split_holdout,
)
from .model import GroupModel

__version__ = "0.1.0"

__all__ = [
    "DegreeStats",
    "GroupModel",
    "RatingsDataset",
    "SplitSpec",
    "degree_stats",
    "load_ratings",
    "save_ratings",
    "split_holdout",
]
