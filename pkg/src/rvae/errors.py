"""Exception hierarchy shared across the package."""


class RvaeError(Exception):
    """Base class for all package errors."""


class ConfigError(RvaeError):
    """Invalid configuration or command arguments."""


class DataFormatError(RvaeError):
    """Malformed CSV, schema file, record file or table contents."""


class SchemaMismatchError(RvaeError):
    """A table, checkpoint or report does not match the expected schema."""


class TrainingError(RvaeError):
    """Training diverged or was called with an unusable setup."""


class CheckpointError(RvaeError):
    """Unreadable, truncated or incompatible checkpoint container."""


class ScoreRuleError(RvaeError):
    """Requested scoring rule is undefined for the given model."""
