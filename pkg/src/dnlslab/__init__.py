"""Lattice soliton toolkit for ``i u_t = -Lap u - |u|^6 u`` on the integer lattice."""

from .errors import ConfigError, DNLSError, NumericalFailure, PreconditionViolation
from .lattice import Boundary, LatticeField, WeightSpec, Window

__all__ = ["Boundary", "ConfigError", "DNLSError", "LatticeField", "NumericalFailure", "PreconditionViolation",
           "WeightSpec", "Window"]
