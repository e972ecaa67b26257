"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class DimensionError(ValueError):
    """Tensor or array extents do not agree."""


class NoGraphError(RuntimeError):
    """backward() called on a tensor that is not on a recorded graph."""


class UnsupportedLengthError(ValueError):
    """FFT length is not a power of two."""


class InvalidSpecError(ValueError):
    """Filter specification outside the realizable range."""


class InvalidWindowError(ValueError):
    """Window too short to hold a single patch."""


class UnknownLeadError(KeyError):
    """ECG lead label not present in the lead-angle table."""


class EmptyInputError(ValueError):
    """An operation received zero channels or zero items."""


class CalibrationError(ValueError):
    """Missing or degenerate quantization calibration data."""


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given labels (e.g. a single class)."""


class UndefinedLossError(ValueError):
    """Loss cannot be computed (e.g. empty mask)."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""
