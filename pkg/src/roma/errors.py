"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class WeightsLoadError(OSError):
    """Pretrained weights could not be loaded."""


class DatasetError(RuntimeError):
    """Dataset layout is missing or unusable."""


class TrainingError(RuntimeError):
    """Training produced an unrecoverable state (e.g. non-finite loss)."""

    def __init__(self, message, components=None):
        super().__init__(message)
        self.components = dict(components or {})
