"""Exception hierarchy shared by every module of the kit."""


class DalignError(Exception):
    """Base class for all errors raised by the kit."""


class DimensionError(DalignError, ValueError):
    pass


class DomainError(DalignError, ValueError):
    """A math function was evaluated outside its domain (e.g. ln of a non-positive)."""


class EmptyReductionError(DalignError, ValueError):
    pass


class EmptyDomainError(DalignError, ValueError):
    """A DA-layer received an empty source or target block in training mode."""


class AlphaRangeError(DalignError, ValueError):
    pass


class StateError(DalignError, RuntimeError):
    pass


class NormalizationError(DalignError, ValueError):
    pass


class LabelIndexError(DalignError, IndexError):
    pass


class LayoutError(DalignError, ValueError):
    pass


class EvaluationError(DalignError, ArithmeticError):
    pass


class DataError(DalignError):
    pass


class FormatError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SpecError(DataError, ValueError):
    pass


class ConfigError(DalignError, ValueError):
    pass


class ModelFormatError(DalignError):
    """Raised when a serialized model cannot be read back."""


class ChecksumError(ModelFormatError):
    pass


class VersionError(ModelFormatError):
    pass


class TrainingError(DalignError, RuntimeError):
    """Training diverged (non-finite loss or parameters)."""
