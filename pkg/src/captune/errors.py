"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration problems are usage
errors (2), sensor/actuator failures are backend errors (3), numerical
failures in fitting or decision-making are analysis errors (4).
"""

from __future__ import annotations


class CaptuneError(Exception):
    """Base class for all captune errors."""


class ConfigError(CaptuneError):
    """Raised for malformed configuration or policy documents."""


class BackendUnavailable(CaptuneError):
    """A sensor read failed; the sampler should mark a gap, never invent values."""


class ActuationFailed(CaptuneError):
    """The backend rejected a power-limit command."""


class AlreadyRunning(CaptuneError):
    """A sampling session is already active on this backend."""


class NotIntegrable(CaptuneError):
    """A trace holds fewer than two samples for the requested domain."""


class MissingDomain(CaptuneError):
    """A required power domain is absent from the trace."""


class EmptyPointSet(CaptuneError):
    """An operation that needs at least one (x, y) point received none."""


class DidNotConverge(CaptuneError):
    """Simplex minimisation ran out of iterations; carries the best point seen."""

    def __init__(self, message: str, best_x=None, best_fx: float | None = None):
        super().__init__(message)
        self.best_x = best_x
        self.best_fx = best_fx


class NotConverged(CaptuneError):
    """A curve fit below the quality gate was passed where a good fit is required."""


class InsufficientPoints(CaptuneError):
    """Too few probe points inside the policy bounds to make a decision."""


class UnknownArchetype(CaptuneError):
    """The requested workload archetype is not in the bundled catalogue."""


class DegenerateVariance(CaptuneError):
    """Pearson correlation is undefined when either series has zero variance."""


class UnknownFormat(CaptuneError):
    """The requested report format is not supported."""
