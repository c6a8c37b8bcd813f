"""Optional numba acceleration.

Set ``FGPL_DISABLE_NUMBA=1`` to force the pure-numpy kernels. ``FGPL_THREADS``
caps the number of numba worker threads.
"""
import os
import warnings

DISABLED = os.environ.get("FGPL_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if DISABLED:
        raise ImportError
    import numba
    from numba import njit, prange

    # harmless: numba falls back to another threading layer
    warnings.filterwarnings("ignore", message="The TBB threading layer requires")

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


def thread_count() -> int:
    env = os.environ.get("FGPL_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def configure_threads(n: int | None = None) -> int:
    n = thread_count() if n is None else max(1, int(n))
    if HAVE_NUMBA:
        n = min(n, numba.config.NUMBA_NUM_THREADS)
        numba.set_num_threads(n)
    return n
