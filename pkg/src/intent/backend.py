"""Kernel backend selection.

Hot numeric kernels ship in two flavors: numba ``@njit`` loops and a
pure-numpy path. The numba path is the default whenever numba imports;
setting ``INTENT_NUMBA=0`` in the environment forces the numpy path
(useful for debugging and as a baseline for ``benchmarks/``).

The flag is read once at import time so that every module in the package
agrees on the active backend.
"""

import os


def _numba_requested() -> bool:
    flag = os.environ.get("INTENT_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


NUMBA_ENABLED = False
if _numba_requested():
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False


def backend_name() -> str:
    """Name of the active kernel backend: 'numba' or 'numpy'."""
    return "numba" if NUMBA_ENABLED else "numpy"


def jit_kernel(fn):
    """Compile ``fn`` with numba when enabled, otherwise return it as-is.

    Only applied to functions whose body is valid under both plain numpy
    and nopython mode, so the two backends share one source of truth.
    """
    if NUMBA_ENABLED:
        from numba import njit

        return njit(cache=True, nogil=True)(fn)
    return fn


def worker_count() -> int:
    """Worker-thread cap: INTENT_THREADS if set, else machine parallelism."""
    env = os.environ.get("INTENT_THREADS", "").strip()
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("INTENT_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1
