"""Numba switch.

Hot kernels are written once as plain loops and compiled with numba when it
is importable and ``HIERCL_NO_NUMBA`` is unset (or ``0``). Otherwise the
dispatchers in :mod:`hiercl._kernels` route to vectorized numpy versions.
"""
import os

_flag = os.environ.get("HIERCL_NO_NUMBA", "0").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    import numba

    NUMBA_ENABLED = True
except ImportError:
    numba = None
    NUMBA_ENABLED = False


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, identity decorator otherwise."""
    if NUMBA_ENABLED:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
