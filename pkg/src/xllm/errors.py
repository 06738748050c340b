"""Exception hierarchy shared by every module.

Each class carries the process exit code the command-line front end reports
for it.
"""


class XLLMError(Exception):
    exit_code = 1


class ConfigurationError(XLLMError, ValueError):
    exit_code = 2


class OrderingError(XLLMError):
    """A stage was requested before the stages it depends on finished."""

    exit_code = 3


class DataError(XLLMError, ValueError):
    exit_code = 4


class DimensionError(DataError):
    pass


class LengthError(DataError):
    pass


class VocabularyError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class CheckpointError(DataError):
    pass


class CheckpointConfigError(CheckpointError, ConfigurationError):
    """Checkpoint written for a differently shaped model."""

    exit_code = 4


class UndefinedRateError(DataError, ZeroDivisionError):
    pass


class NumericalError(XLLMError, ArithmeticError):
    exit_code = 5


class DegenerateWeightError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class FreezeViolation(XLLMError, AssertionError):
    """A parameter group outside the stage's trainable set changed."""
