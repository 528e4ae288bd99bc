from typing import Dict, Optional


class ExposureLabError(Exception):
    """Base class for every error raised by the library"""


class InvalidArgumentError(ExposureLabError, ValueError):
    pass


class ConfigError(InvalidArgumentError):
    pass


class ContractViolationError(ExposureLabError):
    """A propensity or weight outside the open unit interval reached a score"""


class EmptyCellError(ExposureLabError):
    def __init__(self, message: str, cell: Optional[tuple] = None):
        super().__init__(message)
        self.cell = cell


class DegeneratePartitionError(ExposureLabError):
    def __init__(self, message: str, diagnostics: Optional[Dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TrainingDivergenceError(ExposureLabError):
    def __init__(self, message: str, epoch: int, last_finite_loss: Optional[float] = None):
        super().__init__(message)
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss


class FlaggedReplicationsError(ExposureLabError):
    """Too many replications of a study were flagged to trust its table."""

    def __init__(self, message: str, share: float):
        super().__init__(message)
        self.share = share
