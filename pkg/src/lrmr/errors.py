"""Exception types. Argument errors are plain ``ValueError``."""


class NumericalError(ArithmeticError):
    """An iterative kernel failed to converge within its iteration cap.

    ``best`` carries the last (best available) iterate or estimate, if any.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ResourceLimitError(RuntimeError):
    """A requested dense materialization exceeds the configured memory cap."""
