"""Exception types shared across the package."""


class HandriftError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(HandriftError, ValueError):
    """Operands have incompatible shapes for the requested operation."""


class ContractError(HandriftError, ValueError):
    """An API precondition was violated (e.g. non-scalar loss for backward)."""


class ConfigError(HandriftError, ValueError):
    """Invalid configuration value or inconsistent flag combination."""


class InputError(HandriftError, ValueError):
    """Malformed numeric input (non-finite pose, wrong frame count, ...)."""


class NumericalError(HandriftError, ArithmeticError):
    """A computation produced NaN/Inf; the message names the layer or term."""


class InferenceDivergedError(NumericalError):
    """Iterative refinement produced a non-finite intermediate."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"refinement diverged at step n={step}")


class TrainingDivergedError(NumericalError):
    """Training loss blew up; the last good checkpoint was preserved."""


class OptimizerError(NumericalError):
    """A parameter received a non-finite gradient; the message names it."""


class CheckpointError(HandriftError, ValueError):
    """Checkpoint or motion file is malformed or version-incompatible."""
