"""Exception and warning types shared across the toolkit.

Every error raised on purpose derives from ContourTrackError so callers
(and the CLI) can catch one base class and report a structured failure.
Recoverable oddities are Warning subclasses instead.
"""


class ContourTrackError(Exception):
    """Base class for all deliberate failures in this package."""


class EmptyMaskError(ContourTrackError):
    """A segmentation mask contains no foreground pixels."""


class EmptyContourError(ContourTrackError):
    """A contour with zero points where at least one is required."""


class ShortContourError(ContourTrackError):
    """A contour with too few points for the requested operation."""


class ShapeMismatchError(ContourTrackError):
    """Array shapes disagree with what an operation requires."""


class ConfigError(ContourTrackError):
    """A configuration value is out of range or inconsistent."""


class NonFiniteLossError(ContourTrackError):
    """A training loss became NaN or infinite."""


class NonFiniteEnergyError(ContourTrackError):
    """The matching energy became NaN or infinite during optimization."""


class VersionMismatchError(ContourTrackError):
    """A checkpoint was written by an incompatible format or config."""


class CorruptFileError(ContourTrackError):
    """A file exists but cannot be decoded."""


class MissingMaskError(ContourTrackError):
    """A frame has no mask with a matching index."""


class ResolutionMismatchError(ContourTrackError):
    """Frames or masks in one video differ in resolution."""


class EmptyVideoError(ContourTrackError):
    """A video directory contains no frames."""


class EmptyDatasetError(ContourTrackError):
    """A dataset yields no frame pairs to train on."""


class NoForegroundError(ContourTrackError):
    """Threshold segmentation found nothing above the threshold."""


class NoLabelsError(ContourTrackError):
    """Evaluation was requested but no labels are available."""


class InvalidSpecError(ContourTrackError):
    """A synthetic-sequence spec describes an impossible shape."""


class WindowOutOfRangeError(ContourTrackError):
    """A contour index window lies outside the contour."""


class FragmentedBoundaryWarning(UserWarning):
    """Border clipping split the traced boundary; the longest chain was kept."""


class DegenerateTangentWarning(UserWarning):
    """A coincident neighbor pair forced a normal to be copied from its neighbor."""


class SampleClampedWarning(UserWarning):
    """Sampling coordinates fell outside the field and were clamped to the border."""


class NonFiniteSampleWarning(UserWarning):
    """Sampled values contain NaN, propagated from the input field."""
