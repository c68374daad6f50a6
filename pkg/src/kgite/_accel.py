"""Numba switch.

Set ``KGITE_DISABLE_NUMBA=1`` to run every kernel on its pure-numpy path.
The flag is read once at import time.
"""
import os

_FLAG = os.environ.get("KGITE_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(func):
    """``numba.njit(cache=True)`` when numba is available, identity otherwise."""
    if numba is None:
        return func
    return numba.njit(cache=True)(func)
