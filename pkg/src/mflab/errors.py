"""Exception types raised across the package."""


class MflabError(Exception):
    """Base class for all package errors."""


class InvalidArgument(MflabError, ValueError):
    pass


class NumericalFailure(MflabError, ArithmeticError):
    pass


class TruncationRefused(MflabError, ValueError):
    """A signal's band limit exceeds the spectral truncation depth."""


class EvaluationError(MflabError, RuntimeError):
    """A manifold signal evaluator failed on a sample point."""


class DegenerateCase(MflabError, ArithmeticError):
    pass


class InsufficientData(MflabError, ValueError):
    pass


class MapInfeasible(MflabError, RuntimeError):
    pass


class Diverged(MflabError, ArithmeticError):
    def __init__(self, epoch, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss
