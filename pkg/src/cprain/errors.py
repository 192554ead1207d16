"""Exception hierarchy shared by every module of the package."""


class CpRainError(Exception):
    """Base class for all package errors."""


class DomainError(CpRainError, ValueError):
    """An argument lies outside the domain of a distribution or operation."""


class SeriesFailure(CpRainError, ArithmeticError):
    """The compound Poisson series could not be truncated within the term cap.

    The offending parameters are kept on the instance for post-mortem.
    """

    def __init__(self, message, y=None, lam=None, mu=None, omega=None):
        super().__init__(message)
        self.y = y
        self.lam = lam
        self.mu = mu
        self.omega = omega


class DivergenceError(CpRainError, FloatingPointError):
    """The latent ARMA recursion produced a non-finite or non-positive value."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InitializationError(CpRainError, ValueError):
    """Naive moment estimators are not usable for this series."""


class KernelError(CpRainError, RuntimeError):
    """An MCMC kernel hit a pathological target (NaN density, runaway bracket)."""


class CheckpointError(CpRainError, IOError):
    """A checkpoint or binary artifact is corrupt, truncated or of the wrong version."""


class ConfigError(CpRainError, ValueError):
    """Invalid run configuration."""


class DataError(CpRainError, ValueError):
    """Malformed, misaligned or inconsistent input data."""
