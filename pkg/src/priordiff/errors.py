"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with an operation."""


class ContractError(ValueError):
    """A call violated an operation precondition (e.g. non-scalar loss)."""


class GraphStateError(RuntimeError):
    """Backward requested on a computation graph that was already released."""


class ConfigError(ValueError):
    """A configuration value is out of range, unknown, or inconsistent."""


class CheckpointError(RuntimeError):
    """A checkpoint file is malformed, corrupt, or of the wrong stage."""


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""
