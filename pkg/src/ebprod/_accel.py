"""Backend selection for the hot kernels.

Kernels are written once as plain loops and compiled with numba when it is
available. Setting ``EBPROD_DISABLE_NUMBA=1`` switches every public entry
point to the vectorized numpy implementations instead; both paths produce
identical numbers up to floating-point summation order.
"""

import os

# the bundled TBB is too old for numba and only produces a warning
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

_DISABLED = os.environ.get("EBPROD_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator.

    The decorated function is always compiled when numba exists, so the
    benchmark can compare both backends inside one process. Whether the
    compiled version is *used* by default is governed by ``USE_NUMBA``.
    """
    kwargs.setdefault("cache", True)
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(fn):
        return fn

    return wrap


if HAS_NUMBA:
    prange = numba.prange
else:  # pragma: no cover
    prange = range


def set_threads(n):
    """Set the numba worker count (no-op under the numpy backend)."""
    if HAS_NUMBA and n is not None:
        n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
        numba.set_num_threads(n)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
