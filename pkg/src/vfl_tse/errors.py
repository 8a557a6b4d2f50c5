"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid parameter, precondition or configuration value."""


class DimensionError(ValueError):
    """Tensor shapes do not line up."""


class ParseError(ValueError):
    """A persisted artifact could not be parsed."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ValidationError(ValueError):
    """A parsed artifact violates a dataset invariant."""


class NumericError(ArithmeticError):
    """Non-finite values reached an optimizer or estimator."""


class TrainingError(RuntimeError):
    """Training diverged or produced a non-finite loss."""


class ProtocolError(RuntimeError):
    """A party broke the split-training message protocol."""


class StaleTapeError(RuntimeError):
    """Backward was called with a tape from a different network."""
