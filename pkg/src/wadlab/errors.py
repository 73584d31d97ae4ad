"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration object or file failed validation."""


class DataError(ValueError):
    """A dataset, record, or artifact is malformed or unusable."""


class TrainingDivergence(RuntimeError):
    """Training produced a non-finite loss; carries epoch/batch location."""

    def __init__(self, epoch, batch, message="non-finite loss"):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"{message} at epoch {epoch}, batch {batch}")
