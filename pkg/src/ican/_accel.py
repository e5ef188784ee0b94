"""Backend selection for the numeric kernels.

Numba is used when importable unless ``ICAN_NUMBA=0`` is set in the
environment, in which case every kernel falls back to its pure-numpy twin.
"""

import os

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    numba = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("ICAN_NUMBA", "1").lower() not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, identity decorator otherwise."""
    if NUMBA_AVAILABLE:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
