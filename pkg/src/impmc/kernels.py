"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
implementation.  Set ``IMPMC_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py

try:
    from . import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def available_backends() -> list[str]:
    return ["cython", "python"] if _kernels_c is not None else ["python"]


def get_backend(name: str | None = None) -> ModuleType:
    name = name or os.environ.get("IMPMC_BACKEND") or "auto"
    if name == "auto":
        return _kernels_c if _kernels_c is not None else _kernels_py
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _kernels_c is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _kernels_c
    raise ValueError(f"unknown backend {name!r}")


backend = get_backend()
BACKEND = backend.BACKEND
