"""Exception types shared across the package."""


class HoicastError(Exception):
    """Base class for all package-specific errors."""


class DegenerateRotation(HoicastError):
    """6D rotation input cannot be orthonormalized (zero or parallel columns)."""


class NotARotation(HoicastError):
    """Matrix is not orthonormal with determinant +1 within tolerance."""


class ShapeMismatch(HoicastError):
    """Array arguments have inconsistent shapes."""


class ConfigError(HoicastError):
    """Invalid configuration value or unknown configuration key."""


class ParseError(HoicastError):
    """Malformed dataset record; message carries line/field context."""


class RangeError(HoicastError):
    """Scalar argument outside its documented range."""


class CheckpointError(HoicastError):
    """Checkpoint archive missing, malformed, or inconsistent."""


class NaNLoss(HoicastError):
    """Training loss became non-finite; carries the offending stage and step."""

    def __init__(self, stage, step):
        super().__init__(f"non-finite loss at stage {stage} step {step}")
        self.stage = stage
        self.step = step
