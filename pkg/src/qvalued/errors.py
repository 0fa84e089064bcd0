"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: FormatError -> 2,
DimensionMismatch and PreconditionError -> 3.
"""


class QValuedError(Exception):
    """Base class for all package errors."""


class FormatError(QValuedError):
    """A file or in-memory payload does not match the expected schema."""


class DimensionMismatch(QValuedError):
    """Operands disagree on Q, k, or ambient dimension."""


class PreconditionError(QValuedError):
    """An operation's documented precondition does not hold."""


class ResolutionError(QValuedError):
    """A radii schedule probes scales finer than the sampling resolves."""


class DegenerateFitError(QValuedError):
    """Sample geometry is rank-deficient for the requested regression."""
