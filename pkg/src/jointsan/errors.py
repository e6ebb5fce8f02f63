"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A value is outside an operation's domain (NaN input, log of non-positive)."""


class GraphError(RuntimeError):
    """Misuse of the differentiation graph (non-scalar root, repeated backward)."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class DatasetFormatError(ValueError):
    """Malformed dataset or auxiliary input file."""


class AlignmentError(ValueError):
    """A character range could not be mapped onto tokens."""


class CheckpointMismatchError(ValueError):
    """Checkpoint parameters disagree with the requested configuration."""
