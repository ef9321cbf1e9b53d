"""Exception taxonomy.

Every error raised by this package derives from TraildiffError, and each
subclass also derives from the closest builtin so callers who don't know
about the package hierarchy can still catch something sensible.
"""


class TraildiffError(Exception):
    """Base class for all errors raised by traildiff."""


class InvalidArgument(TraildiffError, ValueError):
    """A caller-supplied value violates a documented precondition."""


class InvalidState(TraildiffError, RuntimeError):
    """An operation was invoked on an object in the wrong state.

    Examples: projecting a sequence that is already projected, reading a
    tensor gradient before backward, sampling from an unfitted normalizer.
    """


class NumericFailure(TraildiffError, ArithmeticError):
    """A computation produced non-finite values or diverged."""


class ConstructionFailure(TraildiffError, RuntimeError):
    """A randomized construction failed repeatedly (e.g. an ill-conditioned
    random matrix that never met its condition-number bound)."""
