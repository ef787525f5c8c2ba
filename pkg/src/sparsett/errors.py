"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateRowError(ValueError):
    """A softmax row has no finite entry (every entry is masked)."""


class ContractError(RuntimeError):
    """An API precondition on the differentiation tape was violated."""


class TapeError(RuntimeError):
    """The tape is in a state that does not allow the requested operation."""


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or infinity from finite inputs."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown configuration key."""


class InputError(ValueError):
    """Invalid user-supplied data (crop sizes, boxes, files)."""


class SpecError(ValueError):
    """A synthetic scene description cannot be rendered."""
