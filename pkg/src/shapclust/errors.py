"""Exception hierarchy; each family maps to a CLI exit code."""


class ShapClustError(Exception):
    exit_code = 1


class ConfigError(ShapClustError, ValueError):
    exit_code = 2


class DataError(ShapClustError, ValueError):
    exit_code = 3


class MissingFileError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class RaggedRowError(DataError):
    pass


class NonNumericCellError(DataError):
    pass


class MissingValueError(DataError):
    pass


class MissingLabelColumnError(DataError):
    pass


class NumericError(ShapClustError, ArithmeticError):
    exit_code = 4


class StageError(ShapClustError):
    """Wraps a failure inside a pipeline stage, keeping the original exit code."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
