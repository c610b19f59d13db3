"""
Error kinds used throughout retmil.

Each one subclasses the closest builtin, so callers that only care about
e.g. ValueError keep working, and carries the process exit code the command
line uses for it.
"""


class RetmilError(Exception):

    exit_code = 2


class DimensionError(RetmilError, ValueError):
    "Shapes that don't fit together."


class ConfigError(RetmilError, ValueError):
    "Invalid configuration values or unknown configuration keys."


class InputError(RetmilError, ValueError):
    "Bad input data, e.g. an empty sequence or a label out of range."


class FormatError(RetmilError, ValueError):

    "A file that does not follow the expected binary layout."

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StateError(RetmilError, RuntimeError):
    "An operation was attempted in a state that does not allow it."


class NumericError(RetmilError, ArithmeticError):

    "Non-finite values showed up somewhere they shouldn't."

    exit_code = 3

    def __init__(self, message, context=None):
        if context:
            details = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} [{details}]"
        super().__init__(message)
        self.context = context or {}


class CheckFailure(RetmilError):

    "One or more oracle checks did not pass."

    exit_code = 1
