"""Exception hierarchy shared by all modules."""


class FRDError(Exception):
    """Base class for every error raised by :mod:`frdecomp`."""


class ConfigError(FRDError):
    """Invalid run configuration or lattice parameters."""


class EmptyInterior(FRDError):
    """A cube has fewer than two lattice spacings per side."""


class SolverFailure(FRDError):
    """A Dirichlet solve failed or produced weights violating positivity."""


class StepCapExceeded(FRDError):
    """A random walk exceeded its event budget before leaving the cube."""


class DegenerateBump(FRDError):
    """The bump function has zero lattice sum at the requested spacing."""


class PoleAtZero(FRDError):
    """Evaluation requested at the massless pole a = 0, p = 0."""


class TorusTooSmall(FRDError):
    """A periodisation torus cannot hold the kernel support."""


class NegativeSpectrumBeyondTolerance(FRDError):
    """A covariance spectrum is negative beyond roundoff tolerance."""


class ToleranceUnreachable(FRDError):
    """A quadrature could not reach the requested tolerance within budget."""


class BoundaryNotZero(FRDError, ValueError):
    """A field required to vanish on a boundary does not."""
