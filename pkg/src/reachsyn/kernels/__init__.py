"""Hot-kernel dispatch.

The numerically heavy inner loops (scaling-factor max-min, noise-shift
counting, binomial bound bisection, robust value-iteration sweeps) exist in
two interchangeable implementations:

* :mod:`reachsyn.kernels.numba_impl` -- ``@njit``-compiled, parallel, default;
* :mod:`reachsyn.kernels.numpy_impl` -- pure numpy fallback.

Selection happens once at import time via the ``REACHSYN_KERNELS``
environment variable: ``auto`` (default; numba if importable), ``numba``
(require numba, fail otherwise) or ``numpy``.  ``scripts/bench_kernels.py``
times the two paths against each other.
"""

from __future__ import annotations

import os

_choice = os.environ.get("REACHSYN_KERNELS", "auto").strip().lower()
if _choice not in {"auto", "numba", "numpy"}:
    raise ValueError(
        f"REACHSYN_KERNELS must be one of auto/numba/numpy, got {_choice!r}"
    )

if _choice == "numpy":
    from . import numpy_impl as _impl
else:
    try:
        from . import numba_impl as _impl
    except ImportError:
        if _choice == "numba":
            raise
        from . import numpy_impl as _impl

BACKEND = _impl.BACKEND

lambda_minmax = _impl.lambda_minmax
count_target_boxes = _impl.count_target_boxes
cp_lower_many = _impl.cp_lower_many
cp_upper_many = _impl.cp_upper_many
vi_solve_inf = _impl.vi_solve_inf
vi_solve_finite = _impl.vi_solve_finite

__all__ = [
    "BACKEND",
    "lambda_minmax",
    "count_target_boxes",
    "cp_lower_many",
    "cp_upper_many",
    "vi_solve_inf",
    "vi_solve_finite",
]
