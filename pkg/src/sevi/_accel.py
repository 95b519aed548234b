"""Numba availability probe and the env switch between jitted and numpy kernels.

Set SEVI_NUMBA=0 to force the pure-numpy fallback even when numba is
installed. The selected flavour is fixed at import time.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

NUMBA_ENABLED = HAVE_NUMBA and os.environ.get("SEVI_NUMBA", "1") != "0"


def njit_maybe(func):
    """Jit-compile `func` when numba is importable, else return it unchanged.

    Compilation is lazy (first call), so decorating is cheap even when the
    env flag later routes execution to the numpy path.
    """
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def active_backend():
    return "numba" if NUMBA_ENABLED else "numpy"
