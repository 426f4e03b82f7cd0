"""Error signals shared across the package.

Every failure mode the library reports carries a stable machine-readable
``code`` (kebab-case) so callers, and the CLI error output, can dispatch on
it without parsing messages.
"""

from __future__ import annotations


class LossconfError(Exception):
    """Base class for all package error signals."""

    code = "error"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.details = details


class DeltaNotEvaluableError(LossconfError):
    """A point-mass distribution has no pointwise density; use exact substitution."""

    code = "delta-not-evaluable"


class DeltaNotTruncatableError(LossconfError):
    """A point-mass distribution has no probability-symmetric interval."""

    code = "delta-not-truncatable"


class SupportOutOfRangeError(LossconfError):
    """Requested support leaves the physical transmittance range [0, 1]."""

    code = "support-out-of-range"


class WrongArityError(LossconfError):
    """Single-count operation applied to a joint distribution, or vice versa."""

    code = "wrong-arity"


class CutoffTooSmallError(LossconfError):
    """Lattice cutoff leaves more than the allowed tail mass.

    ``details["required"]`` holds the smallest acceptable cutoff.
    """

    code = "cutoff-too-small"

    def __init__(self, message: str = "", required: int | None = None):
        super().__init__(message, required=required)
        self.required = required


class QuadratureFailedError(LossconfError):
    """Adaptive quadrature did not reach tolerance; ``residual`` is the last change."""

    code = "quadrature-failed"

    def __init__(self, message: str = "", residual: float | None = None):
        super().__init__(message, residual=residual)
        self.residual = residual


class NoThresholdError(LossconfError):
    """Outcome distributions are identical; no decision threshold exists."""

    code = "no-threshold"


class ZeroLikelihoodError(LossconfError):
    """Record lies outside the modeled support of both processes."""

    code = "zero-likelihood"


class SupportMismatchError(LossconfError):
    """Two count distributions do not share a lattice."""

    code = "support-mismatch"


class InsufficientSamplesError(LossconfError):
    """Monte Carlo sample count below the minimum for a meaningful estimate."""

    code = "insufficient-samples"


class BudgetInfeasibleError(LossconfError):
    """Requested final dataset size exceeds the available data."""

    code = "budget-infeasible"


class ConfigError(LossconfError):
    """Invalid run configuration."""

    code = "config-invalid"
