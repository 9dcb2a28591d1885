class SLUError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SLUError, ValueError):
    pass


class DomainError(SLUError, ValueError):
    pass


class DivergenceError(SLUError, ArithmeticError):
    """A loss or gradient became non-finite during training."""


class InputTooShortError(ShapeError):
    pass


class InfeasibleAlignmentError(SLUError, ValueError):
    """The CTC target cannot be aligned within the available frames."""


class UndefinedRateError(SLUError, ZeroDivisionError):
    pass


class ConstraintError(SLUError, ValueError):
    pass


class CorpusParseError(SLUError, ValueError):
    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class CheckpointError(SLUError, ValueError):
    pass


class IncompatibleTransferError(ShapeError):
    """A transfer checkpoint cannot initialise the target model."""
