"""Exception types shared across the package."""
from __future__ import annotations


class CoagFragError(Exception):
    """Base class for all package errors."""


class EvaluationError(CoagFragError):
    """A coefficient map returned a nonfinite or negative value."""


class HypothesisViolation(CoagFragError):
    """A derived quantity falls outside the range the hypotheses guarantee."""


class QuadratureError(CoagFragError):
    """Adaptive quadrature did not reach the requested tolerance."""


class GridError(CoagFragError):
    """The grid is malformed or too coarse for the requested operator."""


class TruncationError(CoagFragError):
    """An initial datum carries non-negligible mass beyond the last grid edge."""


class SingularResolventError(CoagFragError):
    """The resolvent system could not be solved; use a larger spectral parameter."""


class NonContractionError(CoagFragError):
    """Picard iteration stopped contracting; the horizon is too long."""

    def __init__(self, message: str, history: list[float] | None = None):
        super().__init__(message)
        self.history = history or []


class ConfigError(CoagFragError):
    """Malformed or inconsistent scenario configuration."""


class DtUnderflow(CoagFragError):
    """The accepted step fell below ``dt_min``; blow-up is suspected, not proven."""

    def __init__(self, message: str, t: float, dt: float):
        super().__init__(message)
        self.t = t
        self.dt = dt
