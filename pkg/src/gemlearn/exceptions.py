"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions do not line up."""


class DomainError(ValueError):
    """An argument lies outside the set of values an operation accepts."""


class FormatError(ValueError):
    """A data file is malformed (bad magic number, truncated payload, ...)."""


class ProtocolError(RuntimeError):
    """The continual-learning protocol was violated, e.g. a task id went backwards."""


class ConfigError(ValueError):
    """An experiment or estimator configuration is invalid."""


class DataNotFoundError(FileNotFoundError):
    """Dataset files required by an experiment are missing."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before reaching its tolerance.

    Attributes
    ----------
    residual : float
        KKT residual at the last iterate.
    iterations : int
        Number of sweeps performed.
    """

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
