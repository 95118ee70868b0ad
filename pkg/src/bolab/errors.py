"""Exception hierarchy for the laboratory.

Every error raised on a contract violation derives from :class:`BolabError`,
so callers can catch the package's failures without swallowing genuine bugs
(TypeError, AttributeError, ...).
"""

from __future__ import annotations


class BolabError(Exception):
    """Base class for all package-specific errors."""


# --- expression layer -------------------------------------------------------

class ExprSyntaxError(BolabError):
    """Malformed expression text.  Carries the byte offset of the problem."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class UnknownIdentifier(ExprSyntaxError):
    """Identifier that is neither a declared variable nor a known function."""

    def __init__(self, name: str, position: int):
        super().__init__(f"unknown identifier '{name}'", position)
        self.name = name


class DomainError(BolabError):
    """Evaluation left the domain (log of a non-positive number, 0^-1, ...)."""


class NonDifferentiable(BolabError):
    """Symbolic derivative requested through a kink node (abs)."""


# --- model layer -------------------------------------------------------------

class ModelError(BolabError):
    """A model description violates the standing hypotheses."""


class NonHomogeneous(ModelError):
    """g fails the sampled homogeneity identity g(c*y) = c^a g(y)."""


class MinimumNotAtOrigin(ModelError):
    """f has nonzero gradient at 0, or a sampled value below f(0)."""


class DegenerateHessian(ModelError):
    """Hessian of f at the origin is not positive definite."""


class NonPositive(ModelError):
    """f or g takes a non-positive value where positivity is required."""


# --- discretization ----------------------------------------------------------

class SizeError(BolabError):
    """Requested operator exceeds the configured row cap."""


class ExtentOverflow(BolabError):
    """No admissible truncation half-width below the configured maximum."""


# --- eigensolvers ------------------------------------------------------------

class NoConvergence(BolabError):
    """Iterative solver failed to reach the residual tolerance."""

    def __init__(self, message: str, iterations: int, worst_residual: float):
        super().__init__(message)
        self.iterations = iterations
        self.worst_residual = worst_residual


class SingularShift(BolabError):
    """The shifted operator was numerically singular; pick another shift."""


# --- transverse problem ------------------------------------------------------

class DegenerateLevel(BolabError):
    """Transverse level is (numerically) degenerate; corrector ill-posed."""


# --- effective / predictions -------------------------------------------------

class OutsideValidity(BolabError):
    """A prediction was requested outside its regime's validity gate."""


class ClusterAmbiguity(BolabError):
    """Eigenvalues could not be assigned to a transverse band unambiguously."""


# --- hypersurface wells ------------------------------------------------------

class DegenerateParametrization(BolabError):
    """Curve has a vanishing tangent or self-intersection."""


class OrderMismatch(BolabError):
    """Potential does not vanish to the declared order on the surface."""


class DegenerateMinimum(BolabError):
    """A minimum of the well profile has (numerically) zero curvature."""


class ContinuumOfMinima(BolabError):
    """Well profile is flat at its minimum along the surface."""


class MatchAmbiguity(BolabError):
    """Predicted-to-computed eigenvalue matching is not injective."""


# --- harness -----------------------------------------------------------------

class ConfigError(BolabError):
    """Configuration file is malformed; message names the offending field."""


class InsufficientPoints(BolabError):
    """Slope fit needs at least three usable points."""


class NonPositiveError(BolabError):
    """Slope fit received a negative error value."""
