"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Mis-specified network, sampler, or run configuration."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class IntegrationError(RuntimeError):
    """Numerical ODE solve produced a non-finite state."""

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


class CheckpointError(RuntimeError):
    """Checkpoint file is malformed, truncated, or incompatible."""


class TrainingDiverged(RuntimeError):
    """Training loss became non-finite; last finite state was checkpointed."""

    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
