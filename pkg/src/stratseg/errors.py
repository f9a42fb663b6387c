"""Exception hierarchy shared across the package.

Every error carries a single-line message naming the offending path,
field, or grid so the CLI can print it machine-parsably.
"""


class StratsegError(Exception):
    """Base class for all package errors."""


class IoError(StratsegError):
    """Filesystem read/write failure."""


class FormatError(StratsegError):
    """On-disk sidecar/raw pair is malformed or inconsistent."""


class ModeError(StratsegError):
    """Unsupported interpolation mode for the given grid type."""


class PlacementError(StratsegError):
    """An organ template could not be placed without overlap."""


class SplitError(StratsegError):
    """Dataset split fractions are invalid."""


class ShapeError(StratsegError):
    """Tensor/grid shape mismatch."""


class GridMismatch(StratsegError):
    """Two masks or volumes do not share a grid."""


class AlignmentError(StratsegError):
    """Inputs that must be aligned to one grid are not."""


class EmptyMask(StratsegError):
    """Operation requires a nonempty mask."""


class DegenerateSample(StratsegError):
    """Paired sample has no nonzero differences."""


class ZeroReferenceDose(StratsegError):
    """Relative dose difference undefined: reference dose is zero."""


class NoOverlap(StratsegError):
    """Dose grid and target grid share no physical extent."""


class ConfigError(StratsegError):
    """Invalid configuration value or file."""


class DataError(StratsegError):
    """Referenced data is missing or inconsistent."""
