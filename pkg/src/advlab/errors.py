"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes, so each class carries one.
"""


class AdvLabError(Exception):
    exit_code = 1


class ConfigurationError(AdvLabError, ValueError):
    exit_code = 2


class DataError(AdvLabError, ValueError):
    exit_code = 3


class ShapeError(DataError):
    pass


class StateError(AdvLabError, RuntimeError):
    exit_code = 2


class TrainingDivergedError(AdvLabError, ArithmeticError):
    """Raised when a loss becomes NaN or infinite."""

    exit_code = 4

    def __init__(self, epoch, loss=float("nan"), where="training"):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"{where} diverged at epoch {epoch} (loss={loss!r})")
