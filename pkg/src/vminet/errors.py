"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """A configuration value violates a stated invariant."""


class FormatError(ValueError):
    """A file or byte stream does not match its declared layout."""


class ContractError(ValueError):
    """An API precondition was violated (e.g. non-scalar loss)."""


class NumericsError(RuntimeError):
    """A non-finite value appeared where finite values are required."""
