"""Numerics for the critical Trudinger-Moser inequality on unbounded domains."""

from tmoser.constants import DimensionContext, make_context, phi, phi_prime
from tmoser.grid import RadialFunction, RadialGrid, build_grid

__version__ = "0.1.0"

__all__ = [
    "DimensionContext",
    "RadialFunction",
    "RadialGrid",
    "build_grid",
    "make_context",
    "phi",
    "phi_prime",
    "__version__",
]
