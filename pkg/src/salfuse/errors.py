"""Exception types shared across the package."""


class SalfuseError(Exception):
    """Base class for all salfuse errors."""


class InputError(SalfuseError):
    """Bad or missing input data (files, rasters, vector lengths)."""


class ConfigError(SalfuseError):
    """Invalid configuration value or config file entry."""


class EmptyGroundTruth(SalfuseError):
    """Ground-truth mask contains no foreground; score undefined."""
