"""Kernel backend selection.

Hot loops are written once as plain Python over numpy arrays and compiled
with ``numba.njit`` unless ``SAFESCHED_DISABLE_NUMBA=1`` is set (or numba is
missing), in which case the same functions run interpreted and value
iteration switches to a vectorized numpy sweep.
"""
from __future__ import annotations

import os

_disabled = os.environ.get("SAFESCHED_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    import numba
except ImportError:
    numba = None

USE_NUMBA = numba is not None


def jit(fn):
    """Compile ``fn`` with numba (no Python fallback inside), or return it unchanged."""
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
