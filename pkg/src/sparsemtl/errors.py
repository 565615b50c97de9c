"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not conform (names the offending operands)."""


class LabelError(ValueError):
    """A class label is outside the valid range."""


class InputError(ValueError):
    """An input violates a precondition (e.g. empty batch)."""


class ConfigError(ValueError):
    """A configuration object fails its invariants."""


class SplitError(ValueError):
    """A dataset cannot be split as requested."""


class DataFormatError(ValueError):
    """An on-disk artifact does not match its documented format."""


class GraphStateError(RuntimeError):
    """A graph operation was called in the wrong order (e.g. backward before forward)."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss; carries the epoch/step where it happened."""

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
