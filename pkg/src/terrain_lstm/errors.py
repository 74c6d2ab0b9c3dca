"""Exception types raised across the package."""


class ContractViolation(ValueError):
    """A precondition or invariant of an operation was not met."""


class DataError(ValueError):
    """Input data could not be parsed or does not fit the expected schema."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ModelFormatError(ValueError):
    """A model file is corrupt, truncated, or of an unsupported version."""


class FrozenParameterError(ContractViolation):
    """Attempt to update tensors that were frozen after stage-1 training."""
