"""Exception types shared across the package.

Input problems derive from ``ValueError``; numerical failures derive from
``ArithmeticError`` so the CLI can map them to distinct exit codes.
"""


class DegenerateInputError(ValueError):
    """Input is well-formed but makes the requested quantity undefined."""


class TraceFormatError(ValueError):
    """A CSV trace or waveform file could not be parsed."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class InsufficientDataError(ArithmeticError):
    """Not enough usable points to perform a fit."""


class SingularFitError(ArithmeticError):
    """A least-squares system stayed singular after regularization."""

    def __init__(self, message, columns=()):
        if columns:
            message = f"{message} (columns: {', '.join(map(str, columns))})"
        super().__init__(message)
        self.columns = list(columns)


class DivergenceError(ArithmeticError):
    """Gradient descent produced a non-finite loss."""

    def __init__(self, epoch):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch
