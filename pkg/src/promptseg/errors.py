"""Exception types shared across the package.

The CLI maps ``PromptSegError`` subclasses to exit code 2 and
``NumericError`` to exit code 3.
"""


class PromptSegError(Exception):
    pass


class DimensionError(PromptSegError, ValueError):
    pass


class ContractError(PromptSegError, ValueError):
    pass


class FormatError(PromptSegError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ValidationError(PromptSegError, ValueError):
    pass


class CheckpointError(PromptSegError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class SamplingError(PromptSegError, RuntimeError):
    pass


class DataError(PromptSegError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class NumericError(PromptSegError, FloatingPointError):
    pass
