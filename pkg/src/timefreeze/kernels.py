"""Backend selection for the hot integration loops.

The compiled Cython module is used when it was built; otherwise, or when the
environment variable ``TIMEFREEZE_PURE_PYTHON`` is set to a non-empty value,
the pure-Python implementation is loaded instead.

The first-return search always uses the chunked numpy version: it advances
blocks of steps with precomputed powers of the affine RK4 map and beats the
compiled step-by-step loop (see benchmarks/bench_kernels.py). The compiled
loop is kept as an independent reference for the tests.
"""
from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("TIMEFREEZE_PURE_PYTHON"):
    _impl = _pykernels

    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

        BACKEND = "python"

integrate_mechanical = _impl.integrate_mechanical
linear_first_return = _pykernels.linear_first_return

__all__ = ["BACKEND", "integrate_mechanical", "linear_first_return"]
