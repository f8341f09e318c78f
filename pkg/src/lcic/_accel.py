"""Numba switch.

Set ``LCIC_DISABLE_NUMBA=1`` (or numba's own ``NUMBA_DISABLE_JIT``) to run
the pure-numpy kernels instead of the compiled ones.
"""
import os

USE_NUMBA = not (os.environ.get("LCIC_DISABLE_NUMBA", "0") not in ("", "0")
                 or os.environ.get("NUMBA_DISABLE_JIT", "0") not in ("", "0"))

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if USE_NUMBA:
    def njit(func):
        return numba.njit(cache=True, nogil=True)(func)
else:
    def njit(func):
        return func
