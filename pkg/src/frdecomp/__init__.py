"""Finite-range multiscale decomposition of lattice resolvents."""
from .errors import *  # noqa: F401,F403
from .lattice import LatticeKernel, LatticeSpec, MomentumPoint  # noqa: F401

__version__ = "0.1.0"
