"""Optional numba acceleration.

Set ``WMCAL_NUMBA=0`` to force the pure-numpy code paths. When numba is not
importable the numpy paths are used regardless of the flag.
"""
import os

try:
    import numba as nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    nb = None
    HAVE_NUMBA = False


def _flag_enabled() -> bool:
    value = os.environ.get("WMCAL_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _flag_enabled()


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return nb.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda func: func
