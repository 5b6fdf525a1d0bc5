"""Exception hierarchy; the CLI maps each class to an exit code."""


class GrandeError(Exception):
    pass


class ConfigError(GrandeError, ValueError):
    """Invalid hyperparameter, depth, or CLI configuration."""


class DataError(GrandeError, ValueError):
    """Malformed or unusable input data."""


class ModelError(GrandeError, ValueError):
    """Inconsistent model parameters or model file."""


class NumericalError(GrandeError, ArithmeticError):
    """Non-finite loss or gradient during training."""
