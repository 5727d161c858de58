"""Pin the BLAS backing numpy to one thread.

Single-threaded GEMM is both faster for this workload's skinny,
memory-bound matrices and guarantees that results never depend on the
machine's core count or on NOWFUSE_THREADS.
"""

from __future__ import annotations

import ctypes
import glob
import os

import numpy as np

_SYMBOLS = (
    "scipy_openblas_set_num_threads64_",
    "scipy_openblas_set_num_threads",
    "openblas_set_num_threads64_",
    "openblas_set_num_threads",
)


def pin_blas_single_thread() -> bool:
    """Best effort; returns True when a thread control was found."""
    roots = [
        os.path.join(os.path.dirname(np.__file__), ".libs", "*"),
        os.path.dirname(np.__file__) + ".libs/*",
    ]
    candidates = [p for root in roots for p in glob.glob(root)
                  if "openblas" in os.path.basename(p).lower()]
    for path in candidates:
        try:
            lib = ctypes.CDLL(path)
        except OSError:
            continue
        for sym in _SYMBOLS:
            fn = getattr(lib, sym, None)
            if fn is not None:
                fn(1)
                return True
    return False


PINNED = pin_blas_single_thread()
