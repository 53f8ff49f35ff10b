"""Exception hierarchy for the pipeline.

Two families map onto the CLI exit-code contract: ``ConfigError`` (exit 2) for
configuration and input validation problems, ``PipelineError`` (exit 1) for
failures while processing otherwise valid inputs.
"""
from typing import Optional


class KneeOAError(Exception):
    """Base class for every error raised by this package."""

    exit_code: int = 1


class ConfigError(KneeOAError):
    """Invalid configuration or malformed input."""

    exit_code = 2


class PipelineError(KneeOAError):
    """Runtime failure while processing valid inputs."""

    exit_code = 1


# Configuration / validation (exit 2)

class UnknownKeyError(ConfigError):
    """Unknown section or key in a run configuration."""


class InvalidParameterError(ConfigError):
    """A parameter is outside its allowed range."""


class DatasetNotFoundError(ConfigError):
    """Referenced dataset or checkpoint path does not exist."""


class EncodingError(ConfigError):
    """Input file is not valid UTF-8."""

    def __init__(self, path: str, detail: str = ""):
        self.path = path
        suffix = f": {detail}" if detail else ""
        super().__init__(f"{path} is not valid UTF-8{suffix}")


class ColumnMissingError(ConfigError):
    """A mapped column is absent from the CSV header."""

    def __init__(self, column: str, path: Optional[str] = None):
        self.column = column
        where = f" in {path}" if path else ""
        super().__init__(f"Mapped column '{column}' not found{where}")


class SchemaMismatchError(ConfigError):
    """Dataset schema does not match the one stored with a checkpoint."""

    def __init__(self, column: str, detail: str = "missing from dataset"):
        self.column = column
        super().__init__(f"Schema mismatch on column '{column}': {detail}")


class RaggedRowError(ConfigError):
    """A data row has a different number of cells than the header."""

    def __init__(self, row_number: int, expected: int, found: int):
        self.row_number = row_number
        super().__init__(
            f"Row {row_number} has {found} cells, expected {expected}"
        )


class ParseError(ConfigError):
    """A numeric cell could not be parsed as a finite real number."""

    def __init__(self, column: str, row_number: int, value: str):
        self.column = column
        self.row_number = row_number
        super().__init__(
            f"Cannot parse '{value}' in column '{column}' (row {row_number}) as a real number"
        )


# Runtime (exit 1)

class EmptyDatasetError(PipelineError):
    """No rows left to work with."""


class UnseenCategoryError(PipelineError):
    """Categorical value not present in the fitted label maps."""

    def __init__(self, column: str, value: str):
        self.column = column
        self.value = value
        super().__init__(f"Unseen value '{value}' in column '{column}'")


class ShapeError(PipelineError):
    """Tensor shapes do not agree."""


class NonFiniteError(PipelineError):
    """NaN or Inf detected in activations, losses or gradients."""

    def __init__(self, where: str, detail: str = ""):
        self.where = where
        suffix = f": {detail}" if detail else ""
        super().__init__(f"Non-finite values in {where}{suffix}")


class DegenerateClassError(PipelineError):
    """ROC requested for a class without positives or without negatives."""


class ClippingError(PipelineError):
    """Sensed signal exceeds the ADC range."""


class CalibrationError(PipelineError):
    """Calibration is missing, incomplete or produced a zero magnitude."""


class CheckpointError(PipelineError):
    """Checkpoint cannot be written or read."""


class ChecksumError(CheckpointError):
    """Stored checksum does not match the checkpoint contents."""


class VersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class TruncatedCheckpointError(CheckpointError):
    """Checkpoint file ends before its declared contents."""


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(exc, KneeOAError):
        return exc.exit_code
    return 1
