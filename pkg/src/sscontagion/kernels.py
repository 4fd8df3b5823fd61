"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise, or when
``SSCONTAGION_PURE_PYTHON`` is set to a non-empty value other than ``0``,
the numpy implementations are used. Both return identical arrays.
"""

import os

from . import _pykernels
from ._pykernels import SCALE, SamplingBudgetError


def _load(force_python: bool):
    if force_python:
        return _pykernels, "python"
    try:
        from . import _kernels
    except ImportError:
        return _pykernels, "python"
    return _kernels, "cython"


_FORCE = os.environ.get("SSCONTAGION_PURE_PYTHON", "") not in ("", "0")
_impl, BACKEND = _load(_FORCE)

points_in_polygon = _impl.points_in_polygon
ray_tables = _impl.ray_tables
cross_hist = _impl.cross_hist
forward_hist = _impl.forward_hist
sample_uniform = _impl.sample_uniform

__all__ = [
    "BACKEND",
    "SCALE",
    "SamplingBudgetError",
    "points_in_polygon",
    "ray_tables",
    "cross_hist",
    "forward_hist",
    "sample_uniform",
]
