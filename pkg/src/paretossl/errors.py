"""Shared exception types."""


class ShapeError(ValueError):
    """Operand shapes are inconsistent."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value or failed to converge."""


class ConfigError(ValueError):
    """Invalid configuration value or key."""


class FormatError(ValueError):
    """Malformed on-disk data."""


class SamplingError(RuntimeError):
    """A rejection-sampling loop exhausted its trial budget."""


class DegenerateTargetError(ValueError):
    """A loss target is identically zero and the loss is undefined."""


class SplitError(ValueError):
    """An evaluation split cannot support the requested probe."""


class ReportError(ValueError):
    """A metric table is incomplete or inconsistent."""
