"""Bit-sliced crossbar simulation of high-precision matrix inversion and
the mapping of K-FAC training onto it."""

__version__ = "0.1.0"

from .errors import CapacityError, NonConvergenceError, ParseError, PimsolveError
from .fixedpoint import Fixed, QuantSpec, bit_slice, quantize, shift_add
from .hpinv import InvProblem, InvResult, convergence_sweep, invert, invert_fused

__all__ = [
    "CapacityError", "Fixed", "InvProblem", "InvResult", "NonConvergenceError", "ParseError",
    "PimsolveError", "QuantSpec", "bit_slice", "convergence_sweep", "invert", "invert_fused",
    "quantize", "shift_add",
]
