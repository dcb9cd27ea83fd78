"""Shared exception types."""


class ContractError(ValueError):
    """An argument violated a documented precondition (shape/length mismatch)."""


class SingularKeyError(ValueError):
    """A key contains a zero-modulus element and cannot be inverted."""


class DegenerateQueryError(ValueError):
    """A partial-key query with no known key elements."""


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, corrupt, or incompatible with the model."""


class NumericalAbort(RuntimeError):
    """Training hit a non-finite loss or gradient and was stopped."""
