"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a structural constraint (symmetry, support, basis tag)."""


class DimensionLimitError(ValueError):
    """A requested basis or dense operation exceeds the configured size limit."""


class BasisMismatchError(ValueError):
    """Two objects tagged with different bases were combined."""


class ConvergenceError(RuntimeError):
    """An iterative routine did not reach its tolerance within its budget."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
