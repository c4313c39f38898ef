"""Optional numba acceleration.

Set ``COUNTPROC_DISABLE_NUMBA=1`` before import to force the pure
Python/numpy code paths (useful for debugging and for benchmarking the
two backends against each other).
"""

import os

_DISABLE_FLAG = os.environ.get("COUNTPROC_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED_BY_ENV = _DISABLE_FLAG in ("1", "true", "yes", "on")

try:
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

_HAS_NUMBA = _numba is not None and not NUMBA_DISABLED_BY_ENV


def jit(func=None, **kwargs):
    """``numba.njit`` when available and enabled, otherwise the identity.

    The undecorated function is always reachable as ``f.py_func`` so tests
    can compare the two backends within one process.
    """

    def wrap(f):
        if _HAS_NUMBA:
            compiled = _numba.njit(cache=True, **kwargs)(f)
            return compiled
        f.py_func = f
        return f

    if func is None:
        return wrap
    return wrap(func)
