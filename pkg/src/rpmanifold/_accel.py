"""Switch between numba-compiled kernels and their numpy counterparts.

Set ``RPMANIFOLD_DISABLE_NUMBA=1`` to force the numpy path.
"""
from __future__ import annotations

import os

_flag = os.environ.get("RPMANIFOLD_DISABLE_NUMBA", "0").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

USE_NUMBA = _numba is not None and _flag not in ("1", "true", "yes", "on")


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it unchanged."""
    if _numba is None:  # pragma: no cover
        return fn
    return _numba.njit(cache=True, fastmath=False)(fn)


def pick(numba_fn, numpy_fn):
    return numba_fn if USE_NUMBA else numpy_fn
