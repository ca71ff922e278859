"""Runtime acceleration and determinism knobs.

Hot kernels in :mod:`relightfield.kernels` are compiled with numba when
available. Setting ``RELIGHTFIELD_NUMBA=0`` (or numba being absent) selects a
pure NumPy/Python fallback that runs the exact same source, slowly. The
fallback exists for debugging and for the numba-vs-numpy benchmark; the
compiled path is the supported production configuration.

BLAS thread pools are pinned to a single thread at import. Multi-threaded
GEMM changes summation order with the worker count, which would break the
bit-identical reproducibility this package promises. Kernel-level parallelism
instead comes from numba ``prange`` over fixed tile grids, which is
deterministic for any thread count.
"""

from __future__ import annotations

import functools
import os

import numpy as np

_flag = os.environ.get("RELIGHTFIELD_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "off", "no")

NUMBA_ENABLED = False

if _requested:
    try:
        from numba import njit, prange  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        pass

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):  # noqa: D103
        def wrap(fn):
            # numba never surfaces numpy's scalar overflow warnings; silence
            # them in the interpreted path so both modes behave alike
            # (the counter-based RNG relies on wrapping uint64 arithmetic).
            @functools.wraps(fn)
            def run(*a, **kw):
                with np.errstate(all="ignore"):
                    return fn(*a, **kw)

            run.py_func = fn
            return run

        if args and callable(args[0]):
            return wrap(args[0])
        return wrap

    prange = range


def set_kernel_threads(n: int) -> None:
    """Set the worker count for parallel kernels (no-op in fallback mode)."""
    if NUMBA_ENABLED:
        import numba

        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


_BLAS_CONTROLLER = None


def _pin_blas_single_thread():
    global _BLAS_CONTROLLER
    try:
        from threadpoolctl import threadpool_limits

        _BLAS_CONTROLLER = threadpool_limits(limits=1, user_api="blas")
    except Exception:
        _BLAS_CONTROLLER = None


_pin_blas_single_thread()
