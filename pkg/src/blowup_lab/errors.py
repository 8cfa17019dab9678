"""Exception hierarchy shared by the models, diagnostics and CLI."""

from __future__ import annotations


class BlowupLabError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(BlowupLabError, ValueError):
    """Invalid run configuration or model parameters."""


class DomainError(BlowupLabError, ValueError):
    """A closed-form oracle was evaluated outside its region of validity."""


class NumericalFailure(BlowupLabError, ArithmeticError):
    """A numerical routine could not deliver the requested accuracy."""


class NonConvergence(NumericalFailure):
    """Adaptive quadrature exhausted its panel budget."""


class SaturationError(NumericalFailure):
    """An integrand value left the floating-point range."""


class StepFloor(NumericalFailure):
    """The ODE step size collapsed below the allowed floor."""


class NotReached(NumericalFailure):
    """An event was not reached before the search horizon."""


class InsufficientData(BlowupLabError, ValueError):
    """Too few samples in the requested window for a fit."""


class NoBlowupTrend(BlowupLabError, ValueError):
    """The reciprocal series shows no decreasing trend."""


class BlowupDetected(BlowupLabError):
    """Terminal signal of the boundary-layer model: the run has blown up.

    Not a failure. The final grid and global quantities ride along so the
    caller can record them.
    """

    def __init__(self, message: str, grid=None, gq=None, t: float | None = None):
        super().__init__(message)
        self.grid = grid
        self.gq = gq
        self.t = t
