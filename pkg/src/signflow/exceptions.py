"""Exception hierarchy. The CLI maps these onto exit codes:
ConfigError -> 2, DataError -> 3, NumericError and anything else -> 4.
"""


class SignflowError(Exception):
    """Base class for all signflow errors."""


class ConfigError(SignflowError):
    """Invalid or inconsistent configuration."""


class DataError(SignflowError):
    """Problem with dataset files or manifest contents."""


class NumericError(SignflowError):
    """Runtime numerical failure."""


# --- config-shaped ---

class ZeroStd(ConfigError):
    pass


class OddDimension(ConfigError):
    pass


# --- data-shaped ---

class MissingFile(DataError):
    pass


class MalformedRow(DataError):
    def __init__(self, line_number, message):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class UnknownClassLabel(DataError):
    pass


class DuplicateSampleId(DataError):
    pass


class DecodeError(DataError):
    pass


class InconsistentResolution(DataError):
    pass


class TooFewSigners(DataError):
    pass


class EmptySplit(DataError):
    pass


class EmptyClass(DataError):
    pass


class OutputExists(DataError):
    pass


class MissingTensor(DataError):
    pass


class ShapeMismatch(SignflowError):
    """Tensor shape does not match the declared contract."""


class LengthMismatch(SignflowError):
    pass


class IndexOutOfRange(SignflowError):
    pass


class EmptyMatrix(SignflowError):
    pass


# --- numeric ---

class NonFiniteLoss(NumericError):
    pass
