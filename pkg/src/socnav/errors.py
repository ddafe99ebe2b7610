"""Shared exception types."""


class ConfigurationError(ValueError):
    """Invalid configuration: mismatched dimensions, unknown keys, bad values."""


class UsageError(ValueError):
    """A caller violated an API precondition."""


class ScenarioError(RuntimeError):
    """Scenario generation failed (e.g. overcrowded rejection sampling)."""


class TrainingError(RuntimeError):
    """Training produced non-finite numbers."""


class CheckpointError(RuntimeError):
    """A checkpoint or data file is unreadable, corrupt, or version-incompatible."""


class UnsupportedOperation(RuntimeError):
    """The requested operation does not apply to this policy or object."""
