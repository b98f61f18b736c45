"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so raise the most specific
one that applies.
"""


class TamlError(Exception):
    """Base class for all package errors."""


class ConfigError(TamlError):
    """Invalid configuration: bad config file, space or task definition."""


class CheckpointError(TamlError):
    """Checkpoint cannot be used: missing, truncated, or written for a
    different search space."""


class NumericError(TamlError):
    """Training math produced non-finite values; the offending update was
    rejected."""
