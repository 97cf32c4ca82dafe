"""Exception hierarchy shared by all modules.

The CLI maps these onto stable exit codes (validation 2, data/IO 3,
numerical 4), so library code should raise the most specific class.
"""


class ValidationError(ValueError):
    """Bad arguments or malformed configuration."""


class DataError(RuntimeError):
    """Missing, inconsistent, or unreadable data."""


class SegmentationError(DataError):
    """No qualifying zero-velocity crossing found in a trajectory."""


class NumericalError(RuntimeError):
    """Numerical failure: divergence, singular regression, degenerate variance."""
