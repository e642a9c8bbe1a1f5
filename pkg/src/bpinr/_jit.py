"""Numba switch.

Hot kernels are compiled with ``numba.njit`` unless ``BPINR_DISABLE_NUMBA=1``
is set in the environment (or numba cannot be imported), in which case the
vectorised numpy implementations in :mod:`bpinr.kernels` are used instead.
"""

import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False


def _flag(name):
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAS_NUMBA and not _flag("BPINR_DISABLE_NUMBA")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator.

    Decoration always happens when numba is present so that both code paths
    stay testable in one process; :data:`USE_NUMBA` only decides which one the
    public kernels dispatch to.
    """
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda func: func
