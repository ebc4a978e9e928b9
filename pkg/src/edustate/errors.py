"""Exception types shared across the package."""


class EdustateError(Exception):
    """Base class for package-specific failures."""


class SchemaError(EdustateError):
    """Input violates a structural contract (wrong size, bad reference, non-finite value)."""


class InsufficientDataError(EdustateError):
    """Operation needs more data than was provided."""


class ShapeError(EdustateError):
    """Array shape does not match what a layer or optimizer expects."""


class StateError(EdustateError):
    """Operation called out of order (e.g. backward before forward)."""


class ConfigError(EdustateError):
    """Invalid run or model configuration."""


class ProtocolError(EdustateError):
    """Dataset cannot support the evaluation protocol."""


class DegenerateLabelsError(EdustateError):
    """Threshold selection needs both classes present."""


class DivergenceError(EdustateError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class ConversionError(EdustateError):
    """External dataset could not be mapped onto the canonical schema."""


class DatasetError(EdustateError):
    """On-disk dataset is malformed; the message carries file/line context."""
