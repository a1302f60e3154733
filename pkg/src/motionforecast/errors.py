"""Exception hierarchy shared across the package."""


class MotionForecastError(Exception):
    """Base class for all package errors."""


class NonFiniteInput(MotionForecastError):
    """Input data contains NaN or infinite coordinates."""


class ZeroLengthSegment(MotionForecastError):
    """A skeleton segment has zero length, so it cannot be normalized."""


class ContextMismatch(MotionForecastError):
    """Normalization context does not match the recording it is applied to."""


class RecordingTooShort(MotionForecastError):
    """Recording has too few frames for the requested window operation."""


class LengthMismatch(MotionForecastError):
    """Flat vector length does not match the requested window shape."""


class ShapeMismatch(MotionForecastError):
    """Array shapes are inconsistent with the layer or model definition."""


class NonFiniteGradient(MotionForecastError):
    """A gradient array contains NaN or infinite entries."""


class NonFiniteLoss(MotionForecastError):
    """Training loss became NaN or infinite.

    Carries ``last_good``, the most recent model snapshot whose loss was
    still finite (or None when the very first evaluation diverged).
    """

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class CheckpointError(MotionForecastError):
    """Base class for checkpoint I/O failures."""


class VersionMismatch(CheckpointError):
    """Checkpoint format version is not supported."""


class WindowTooShort(MotionForecastError):
    """Window has too few frames for a velocity estimate."""


class DegenerateVariance(MotionForecastError):
    """A variance used in goal inference is not strictly positive."""


class DegenerateData(MotionForecastError):
    """Data matrix has zero variance in every dimension."""


class GroupTooSmall(MotionForecastError):
    """A point group is too small for a separation score."""


class TargetUnreachable(MotionForecastError):
    """Requested reach target lies outside the arm's reachable sphere."""
