class MPrunerError(Exception):
    """Base class for toolkit errors."""


class InvalidArgumentError(MPrunerError, ValueError):
    pass


class ShapeError(MPrunerError, ValueError):
    pass


class HookIndexError(MPrunerError, IndexError):
    pass


class CheckpointFormatError(MPrunerError, ValueError):
    pass


class StructuralError(MPrunerError):
    """A prune would leave the model without any blocks."""


class DegenerateActivationError(MPrunerError, ValueError):
    """Activations at a hook are (numerically) constant across the batch."""

    def __init__(self, message: str, hook: int | None = None):
        self.hook = hook
        if hook is not None:
            message = f"{message} (hook {hook})"
        super().__init__(message)


class TrainingDivergedError(MPrunerError, RuntimeError):
    def __init__(self, epoch: int, step: int):
        self.epoch = epoch
        self.step = step
        super().__init__(f"training loss became non-finite at epoch {epoch}, step {step}")
