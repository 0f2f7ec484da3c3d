class ConfigError(ValueError):
    """Invalid configuration (architecture, experiment file, CLI flags)."""


class WeightFileError(IOError):
    """A weight file is truncated, corrupted, or of an unsupported version."""


class InversionError(RuntimeError):
    """An optimisation run diverged; ``trajectory`` holds what was logged so far."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class TruncatedWeightFile(WeightFileError):
    pass


class ChecksumError(WeightFileError):
    pass


class VersionMismatch(WeightFileError):
    pass
