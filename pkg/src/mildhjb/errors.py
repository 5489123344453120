"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid model, solver or file configuration (CLI exit code 3)."""


class DegenerateLawError(ValueError):
    """A Gaussian law needed for integration has a singular covariance."""


class SmoothingHypothesisError(ValueError):
    """The control directions are not covered by the projected noise."""


class ConvergenceError(RuntimeError):
    """An iteration failed to reach its tolerance (CLI exit code 2).

    The partial trace is attached so callers can report it.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class QuadratureBudgetError(RuntimeError):
    """The estimated quadrature error exceeds the requested tolerance."""
