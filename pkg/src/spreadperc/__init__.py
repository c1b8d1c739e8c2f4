"""Spread-out bond percolation on Z^d: lazy cluster exploration, Monte
Carlo estimators, critical-point brackets and an exact oracle."""

__version__ = "0.1.0"

from .lattice import Box, Complement, Full, HalfSpace, Intersect, LatticeSpec, Slab  # noqa: E402
from .estimators import Estimate  # noqa: E402

__all__ = ["Box", "Complement", "Full", "HalfSpace", "Intersect", "LatticeSpec", "Slab",
           "Estimate", "__version__"]
