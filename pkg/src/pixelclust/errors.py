"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 1,
unreadable inputs with 2 and training divergence with 3.
"""


class ConfigurationError(ValueError):
    """Raised for invalid shapes, hyperparameters or file formats."""


class InputError(OSError):
    """Raised when an image or label map cannot be read."""


class DivergenceError(RuntimeError):
    """Raised when a non-finite value appears during training."""
