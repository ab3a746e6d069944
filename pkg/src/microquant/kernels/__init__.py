"""Hot numeric kernels with interchangeable backends.

The numba backend is used by default. Setting ``MICROQUANT_NO_NUMBA=1`` in
the environment (or running without numba installed) selects the pure numpy
backend. Both backends expose the same functions and are checked against each
other in the test suite; ``benchmarks/bench_kernels.py`` times them.
"""
import os

from . import _numpy as numpy_backend

_DISABLED = os.environ.get("MICROQUANT_NO_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("numba disabled via MICROQUANT_NO_NUMBA")
    from . import _numba as numba_backend
except ImportError:
    numba_backend = None

backend = numba_backend if numba_backend is not None else numpy_backend
BACKEND_NAME = "numba" if backend is numba_backend else "numpy"

pair_sums = backend.pair_sums
hough_ppht = backend.hough_ppht

__all__ = ["BACKEND_NAME", "backend", "numba_backend", "numpy_backend", "pair_sums", "hough_ppht"]
