"""Thread-count control for the compiled loops and BLAS.

Compiled loops use numba's pool; its size is fixed at import by
``NUMBA_NUM_THREADS``, so requests above that are clamped. BLAS is pinned to
one thread while solving so that factorizations do not depend on the thread
count.
"""

from __future__ import annotations

import contextlib
import os

import numba
from threadpoolctl import threadpool_limits

ENV_THREADS = "RECON_THREADS"


def available_threads() -> int:
    return int(numba.config.NUMBA_NUM_THREADS)


def resolve_threads(requested: int | None) -> int:
    """``requested``, else ``$RECON_THREADS``, else all available; clamped to the pool."""
    if requested is None:
        env = os.environ.get(ENV_THREADS)
        requested = int(env) if env else available_threads()
    if requested < 1:
        raise ValueError(f"thread count must be >= 1, got {requested}")
    return min(requested, available_threads())


def set_threads(n: int) -> int:
    n = resolve_threads(n)
    numba.set_num_threads(n)
    return n


@contextlib.contextmanager
def deterministic_blas():
    with threadpool_limits(limits=1, user_api="blas"):
        yield
