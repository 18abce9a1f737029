"""Select between numba-compiled kernels and the pure numpy fallback.

Set ``CATHETER3D_DISABLE_NUMBA=1`` before import to force the numpy path.
"""
import os

_FLAG = "CATHETER3D_DISABLE_NUMBA"

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is optional
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator.

    The decorated function is always compiled when numba exists, so the
    numba and numpy code paths can be compared within a single process
    regardless of the environment flag.
    """
    if _numba is not None:
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
