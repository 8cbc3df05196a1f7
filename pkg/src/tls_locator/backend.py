"""Selection of the numba or pure-numpy implementation of the hot kernels.

Set ``TLS_LOCATOR_NO_NUMBA=1`` in the environment to force the vectorized
numpy fallbacks (useful for debugging and as a reference in the benchmark
suite).  ``TLS_LOCATOR_THREADS`` caps the numba thread pool.
"""

import os

_FALSEY = ("", "0", "false", "no", "off")


def numba_disabled() -> bool:
    return os.environ.get("TLS_LOCATOR_NO_NUMBA", "").strip().lower() not in _FALSEY


try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency, but keep the escape hatch
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not numba_disabled()

if USE_NUMBA:
    thread_cap = os.environ.get("TLS_LOCATOR_THREADS", "").strip()
    if thread_cap.isdigit() and int(thread_cap) > 0:
        numba.set_num_threads(min(int(thread_cap), numba.config.NUMBA_NUM_THREADS))


def njit(func):
    """Apply ``numba.njit(cache=True)`` unless the numpy fallback is forced."""
    if USE_NUMBA:
        return numba.njit(cache=True)(func)
    return func
