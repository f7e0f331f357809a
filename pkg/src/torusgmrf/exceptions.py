"""Exception types shared across the package.

The CLI maps these onto exit codes: :class:`SchemaError` -> 2,
:class:`PreconditionError` and its subclasses -> 3.
"""


class SchemaError(ValueError):
    """Malformed configuration or input file."""


class PreconditionError(ValueError):
    """A numeric precondition of an operation is violated."""


class NonSPDError(PreconditionError):
    """I - C(theta) is not positive definite."""


class DenseLimitError(PreconditionError):
    """A dense p^2 x p^2 oracle was requested above the configured size limit."""


class NotBlockCirculantError(PreconditionError):
    pass


class NotSymmetricError(PreconditionError):
    pass
