"""Exception types shared across the package."""


class MissingStratumError(ValueError):
    """A calibration set lacks the examples a statistic is defined over."""


class ConfigurationError(RuntimeError):
    """A model, checkpoint or calibration needed for inference is missing."""


class GraphStateError(RuntimeError):
    """Backward was requested on a tensor with no recorded forward pass."""
