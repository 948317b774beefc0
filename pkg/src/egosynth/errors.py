class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class DegeneracyError(ValidationError):
    """Raised for singular or otherwise degenerate geometry."""


class ParseError(ValueError):
    """Raised when a serialized file cannot be read back."""

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
    """Raised when an optimizer produces a non-finite iterate."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        super().__init__(message)
