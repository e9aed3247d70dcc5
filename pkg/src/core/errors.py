"""
Exception types shared by the falconc modules.
"""


class DataError(ValueError):
    """Malformed input, broken contract, or invalid configuration."""


class NumericError(ArithmeticError):
    """Non-finite value encountered during training or scoring."""

    def __init__(self, message: str, layer: str = None, epoch: int = None):
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch
