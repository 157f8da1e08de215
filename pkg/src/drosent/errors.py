"""Exception hierarchy.

The CLI maps these onto exit statuses: usage problems exit 1, data and
format problems exit 2, numerical failures exit 3.
"""


class DroError(Exception):
    """Base class for every error raised by this package."""

    exit_status = 1


class UsageError(DroError):
    exit_status = 1


class InvalidConfigError(UsageError):
    pass


class InvalidSpecError(UsageError):
    pass


class InvalidInputError(DroError):
    exit_status = 2


class ShapeError(InvalidInputError):
    pass


class InvalidLabelError(InvalidInputError):
    pass


class DataFormatError(InvalidInputError):
    pass


class InvalidScoreError(DataFormatError):
    pass


class NumericalFailureError(DroError):
    """An iterative solver stopped before reaching its tolerance."""

    exit_status = 3

    def __init__(self, message, residual=None):
        if residual is not None:
            message = f"{message} (residual={residual:.3e})"
        super().__init__(message)
        self.residual = residual
