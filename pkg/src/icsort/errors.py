"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid parameters, config files, or CLI flags."""


class CohortFormatError(RuntimeError):
    """Corrupt, truncated, or version-mismatched cohort files."""


class ModelFormatError(RuntimeError):
    """Corrupt or incompatible persisted model files."""


class TrainingError(RuntimeError):
    """Training could not proceed or did not converge."""
