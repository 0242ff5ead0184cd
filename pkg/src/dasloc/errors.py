"""Exception types shared across the package."""


class DaslocError(Exception):
    """Base class for all errors raised by dasloc."""


class ZeroDistance(DaslocError):
    """Two points coincide where a strictly positive distance is required."""


class MinDistanceViolation(DaslocError):
    """A user position is closer to an antenna than the configured minimum."""


class NonSquareN(DaslocError):
    """Grid layout requested with an antenna count that is not a perfect square."""


class ExhaustedRedraws(DaslocError):
    """Rejection sampling failed to find a valid point within the redraw cap."""


class ShapeMismatch(DaslocError):
    """Array shapes are incompatible with the requested operation."""


class WrongFeatureMode(DaslocError):
    """Operation requires a dataset with a different feature mode."""


class TooFewSamples(DaslocError):
    """Dataset is too small to split."""


class IndexOutOfRange(DaslocError):
    """A selection index falls outside the feature vector."""


class EmptyInput(DaslocError):
    """Metric requested over an empty collection."""


class ConfigError(DaslocError):
    """Experiment config file is malformed (message carries file and line)."""


class FileFormatError(DaslocError):
    """Binary dataset or model file failed validation."""
