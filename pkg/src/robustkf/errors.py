"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad distribution, dimensions, or config file."""


class NumericalError(RuntimeError):
    """A numerical operation produced an unusable result (non-finite or indefinite)."""
