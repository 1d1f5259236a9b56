"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad shapes, widths, hyperparameters, or parity."""


class DatasetParseError(ValueError):
    """Malformed dataset file; message carries the offending row/cell."""


class CheckpointError(ValueError):
    """Unreadable, truncated, or mismatched checkpoint file."""


class TrainingError(RuntimeError):
    """Training aborted, e.g. a loss component became non-finite."""
