"""Exception types shared across the package."""


class FormatError(Exception):
    """A file or byte stream does not match its declared layout."""


class ConfigError(Exception):
    """A run configuration is missing, contradictory, or refers to absent inputs."""


class NumericError(Exception):
    """A computation produced or received non-finite numbers."""


class TrainingError(NumericError):
    """Training diverged or could not proceed."""
