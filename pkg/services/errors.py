class GsotError(Exception):
    """Base class for failures raised by the estimation services."""


class ConfigError(GsotError):
    """Run configuration could not be parsed or is inconsistent."""


class DataFormatError(GsotError):
    """An input file (covariance, WAV, geometry sidecar) is malformed."""


class NumericalRangeError(GsotError):
    """Values left the representable floating point range."""


class ConvergenceError(GsotError):
    """An iterative method stopped before meeting its tolerance."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class SingularCovarianceError(GsotError):
    """The (loaded) covariance matrix could not be factorized."""


__all__ = [
    'GsotError',
    'ConfigError',
    'DataFormatError',
    'NumericalRangeError',
    'ConvergenceError',
    'SingularCovarianceError'
]
