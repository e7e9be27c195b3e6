"""Kernel dispatch: numba when available, pure numpy otherwise.

Set ``SAMLAB_NUMBA=0`` in the environment before import to force the numpy
path (useful for debugging and for the benchmark in ``benchmarks/``).
"""

import os

from . import _kernels_numpy as numpy_impl

_NAMES = (
    "softmax_rows",
    "log_softmax_rows",
    "softmax_rows_backward",
    "layernorm_rows",
    "layernorm_rows_backward",
    "cross_entropy_rows",
    "scatter_add_rows",
    "two_basin_descend",
    "quadratic_sam_orbit",
    "adafactor_factored",
)


def _numba_requested() -> bool:
    return os.environ.get("SAMLAB_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


numba_impl = None
if _numba_requested():
    try:
        from . import _kernels_numba as numba_impl
    except ImportError:  # numba missing or broken
        numba_impl = None

USING_NUMBA = numba_impl is not None
backend = "numba" if USING_NUMBA else "numpy"
_impl = numba_impl if USING_NUMBA else numpy_impl

softmax_rows = _impl.softmax_rows
log_softmax_rows = _impl.log_softmax_rows
softmax_rows_backward = _impl.softmax_rows_backward
layernorm_rows = _impl.layernorm_rows
layernorm_rows_backward = _impl.layernorm_rows_backward
cross_entropy_rows = _impl.cross_entropy_rows
scatter_add_rows = _impl.scatter_add_rows
two_basin_descend = _impl.two_basin_descend
quadratic_sam_orbit = _impl.quadratic_sam_orbit
adafactor_factored = _impl.adafactor_factored
