"""Numba switch for the hot kernels.

Set ``FPNORMAL_DISABLE_NUMBA=1`` to force the pure-numpy code paths. The
flag is read once at import time; :func:`use_numba` reports the active path.
"""
import os

_DISABLED = os.environ.get("FPNORMAL_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

# the bundled TBB is too old for numba; workqueue is always available
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

try:
    if _DISABLED:
        raise ImportError
    import numba
    from numba import njit, prange
    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f

    prange = range


def use_numba():
    return HAVE_NUMBA


def set_threads(n):
    """Limit numba and BLAS worker threads. Results do not depend on ``n``."""
    if n is None:
        return
    n = max(1, int(n))
    if HAVE_NUMBA:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(n)
    except ImportError:
        pass
