"""Numba shim.

Set ``OPINIONXF_NUMBA=0`` to force the pure-numpy kernels even when numba is
installed. Without numba the numpy path is always used.
"""
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

_flag = os.environ.get("OPINIONXF_NUMBA", "1").strip().lower()
USE_NUMBA = HAVE_NUMBA and _flag not in ("0", "false", "no", "off")


def njit(func):
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


__all__ = ["HAVE_NUMBA", "USE_NUMBA", "njit", "backend_name"]

