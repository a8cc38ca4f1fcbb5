"""Exception types raised across the package."""


class GaitContourError(Exception):
    """Base class for all package errors."""


class EmptyMask(GaitContourError):
    pass


class DegenerateContour(GaitContourError):
    pass


class InvalidKeypointCount(GaitContourError):
    pass


class TooFewContourPoints(GaitContourError):
    pass


class LengthMismatch(GaitContourError):
    pass


class ShapeMismatch(GaitContourError, ValueError):
    pass


class UnknownRegion(GaitContourError, KeyError):
    pass


class DegenerateBatch(GaitContourError):
    pass


class InsufficientData(GaitContourError):
    pass


class EmptySet(GaitContourError):
    pass


class NoImpostors(GaitContourError):
    pass


class ChecksumMismatch(GaitContourError):
    pass


class FigureOutOfFrame(GaitContourError):
    pass


class FormatError(GaitContourError):
    """A file on disk does not follow the expected container layout."""


class ConfigError(GaitContourError):
    """Experiment configuration failed validation."""
