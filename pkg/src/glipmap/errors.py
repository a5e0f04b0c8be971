"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Invalid input data, configuration or precondition."""


class FormatError(ValidationError):
    """A file could not be parsed. Carries the offending line number when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class DivergenceError(RuntimeError):
    """Optimization produced a non-finite loss."""

    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
