"""Exception types shared across the package."""


class DimensionMismatchError(ValueError):
    """Raised when array shapes disagree at an API boundary."""


class EmptyFeasibleSetError(ValueError):
    """Raised when the capped simplex {w : sum w = 1, 0 <= w <= b} is empty."""


class DivergenceError(RuntimeError):
    """Raised when an iterate becomes non-finite.

    Attributes
    ----------
    iteration : int
        First iteration at which a non-finite value was observed.
    """

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class SingularSystemError(RuntimeError):
    """Raised when a dense linear solve meets a singular or
    numerically rank-deficient matrix (condition number > 1e12)."""


class ConfigError(ValueError):
    """Raised for malformed experiment configuration; the message names
    the offending key."""
