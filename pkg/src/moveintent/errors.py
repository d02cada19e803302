"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class GraphStateError(RuntimeError):
    """Backward was requested on a tensor without a recorded forward graph."""


class ConfigError(ValueError):
    """A model or experiment configuration is inconsistent."""


class DataError(RuntimeError):
    """Input data is missing or unusable."""


class PartialWriteError(DataError):
    """An artifact directory was left incomplete by an interrupted write."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""
