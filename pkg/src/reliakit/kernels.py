"""Backend selection for the hot kernels.

The compiled ``_kernels`` extension is preferred. Setting the environment
variable ``RELIAKIT_PURE_PYTHON=1`` (or a missing build) selects the
pure-Python fallback. Both expose the same three functions.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels

_compiled: ModuleType | None
try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def available_backends() -> list[str]:
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "cython")
    return names


def get_backend(name: str | None = None) -> ModuleType:
    if name is None:
        name = BACKEND
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    if name == "python":
        return _pykernels
    raise ValueError(f"unknown kernel backend {name!r}")


if os.environ.get("RELIAKIT_PURE_PYTHON") or _compiled is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

_impl = get_backend(BACKEND)
page_hinkley_scan = _impl.page_hinkley_scan
kth_neighbor_distance = _impl.kth_neighbor_distance
linear_assignment = _impl.linear_assignment
