class ValidationError(ValueError):
    """Invalid input data or parameters."""


class ConfigError(ValidationError):
    """Invalid experiment configuration."""


class NumericalError(FloatingPointError):
    """Non-finite loss or gradient during optimization."""
