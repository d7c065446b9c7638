"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: usage errors -> 1, data/format errors -> 2,
numeric failures -> 3.
"""


class BodyMetricError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(BodyMetricError):
    """Tensor/vector dimensions do not match a declared contract."""


class DomainError(BodyMetricError):
    """An input value lies outside the documented domain."""


class ContractError(BodyMetricError):
    """A call-sequence or argument contract was violated (e.g. stale tape)."""


class FormatError(BodyMetricError):
    """A binary or JSON artifact does not conform to its layout.

    ``offset`` is the byte offset of the first violation when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DegenerateEmbeddingError(BodyMetricError):
    """A zero-norm vector reached an operation that requires normalization."""


class NumericError(BodyMetricError):
    """Non-finite values appeared where the math guarantees finiteness."""
