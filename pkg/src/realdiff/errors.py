"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class BoundsError(IndexError):
    pass


class NumericError(FloatingPointError):
    """Non-finite values where finite ones are required."""


class ContractError(RuntimeError):
    pass


class DivergenceError(NumericError):
    """Raised when an integration or a training loss produces NaN."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ConfigError(ValueError):
    pass


class FormatError(ValueError):
    """Malformed input file; message carries the offending row when known."""


class BuildError(ValueError):
    pass
