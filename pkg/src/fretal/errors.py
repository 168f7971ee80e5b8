"""
Exception hierarchy for the adaptation framework.

Every error carries the exit code of its family so the command-line front end
can map failures without inspecting messages:

1. ConfigError    -> 1
2. DataError      -> 2
3. ProtocolError  -> 3
4. AcceptanceError -> 4
"""

from typing import Iterable, Optional


class FretalError(Exception):
    """Base class for all framework errors."""

    exit_code: int = 1


class ConfigError(FretalError, ValueError):
    """Invalid configuration value or document."""

    exit_code = 1


class DataError(FretalError, ValueError):
    """Input data violates a contract."""

    exit_code = 2


class InputContractError(DataError):
    """A forward input has the wrong shape or value range."""

    def __init__(self, message: str, index: Optional[int] = None):
        self.index = index
        if index is not None:
            message = f"input {index}: {message}"
        super().__init__(message)


class BatchContractError(DataError):
    """Paired batches disagree in length or width."""


class EmptyInputError(DataError):
    """An operation received no samples."""


class LabelError(DataError):
    """A label outside {0, 1}."""


class NumericInputError(DataError):
    """Non-finite or out-of-range numeric input."""


class StoreContractError(DataError):
    """Feature stores with incompatible bins or feature dimension."""


class IncompatibleArchitectureError(DataError):
    """Two models (or a model and a checkpoint) do not share an architecture."""


class IngestionError(DataError):
    """Frames or manifest entries could not be ingested."""

    def __init__(self, message: str, paths: Iterable[str] = ()):
        self.paths = list(paths)
        if self.paths:
            message = f"{message}: " + ", ".join(self.paths)
        super().__init__(message)


class ProtocolError(FretalError):
    """The training protocol was violated."""

    exit_code = 3


class FrozenModelError(ProtocolError):
    """A frozen model was handed to an optimizer or training step."""


class SourceDataViolation(ProtocolError):
    """Source-domain samples reached the adaptation loop."""


class UnderTrainedTeacherError(ProtocolError):
    """The teacher did not reach the minimum source F1."""


class AcceptanceError(FretalError):
    """Experiment results fail the acceptance thresholds."""

    exit_code = 4

    def __init__(self, failures: Iterable[str]):
        self.failures = list(failures)
        super().__init__("acceptance check failed: " + "; ".join(self.failures))
