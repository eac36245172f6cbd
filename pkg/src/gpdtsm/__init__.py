"""Gaussian dynamic term-structure model with an unspanned, possibly nonlinear macro effect
on the physical factor dynamics, learned sequentially by iterated batch importance sampling."""

from .errors import DTSMError, NumericalError, ValidationError
from .modelspec import ModelSpec, parse_model_id

__all__ = ["DTSMError", "ModelSpec", "NumericalError", "ValidationError", "parse_model_id"]
__version__ = "0.1.0"
