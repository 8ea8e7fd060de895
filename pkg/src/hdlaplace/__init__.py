"""High-dimensional Laplace expansion: terms, remainder certificates and reference integrals."""

__version__ = "0.1.0"

from .bell import bell_sequence
from .coefficients import a2_closed_form, coeff_explicit, coeff_mc
from .oracle import integrate_reference, true_remainder
from .problem import LocalJet, ProblemSpec, builtin_problem, standardize
from .tensor_core import SymTensor, WeightMatrix, operator_norm

__all__ = [
    "LocalJet",
    "ProblemSpec",
    "SymTensor",
    "WeightMatrix",
    "a2_closed_form",
    "bell_sequence",
    "builtin_problem",
    "coeff_explicit",
    "coeff_mc",
    "integrate_reference",
    "operator_norm",
    "standardize",
    "true_remainder",
]
