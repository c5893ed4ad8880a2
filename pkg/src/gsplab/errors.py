"""Exception hierarchy shared by all modules.

The CLI maps ``ValidationError`` to exit code 2 and ``InapplicableError``
to exit code 3.
"""


class GSPError(Exception):
    """Base class for library errors."""


class ValidationError(GSPError, ValueError):
    """Malformed input: bad measure, bad config, violated structural precondition."""


class InapplicableError(GSPError):
    """A mathematical precondition fails (divergent moment, level below threshold, ...)."""


class CovarianceInvalidError(GSPError):
    """A covariance matrix is not positive semidefinite within tolerance."""
