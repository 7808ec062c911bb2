"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Input tensor has the wrong rank or dimensions."""


class DegenerateInputError(ValueError):
    """Numerically degenerate input (zero norm, vanishing spectrum, ...)."""


class CacheStateError(RuntimeError):
    """A decode session or layer cache was used out of order."""


class WeightFormatError(ValueError):
    """A weight container failed validation; the message names the tensor."""
