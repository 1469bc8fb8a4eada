"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension is used when it imports; set ``ARPROTECT_PURE=1`` to
force the numpy implementation. ``BACKEND`` names the active one.
"""
import os

from . import _pykernels as py

try:
    if os.environ.get("ARPROTECT_PURE"):
        raise ImportError("pure backend requested")
    from . import _ckernels as compiled
except ImportError:
    compiled = None

_active = compiled if compiled is not None else py
BACKEND = "cython" if compiled is not None else "numpy"

dd_series = _active.dd_series
threshold_crossings = _active.threshold_crossings
sample_entropy = _active.sample_entropy
mamdani_centroid = _active.mamdani_centroid

__all__ = [
    "BACKEND",
    "compiled",
    "py",
    "dd_series",
    "threshold_crossings",
    "sample_entropy",
    "mamdani_centroid",
]
