"""Exception types raised across the package."""


class GeotrackError(Exception):
    """Base class for all package errors."""


class EmptySegment(GeotrackError, ValueError):
    """An operation that needs at least one point received none."""


class FormatError(GeotrackError, ValueError):
    """An input file does not follow the expected layout."""


class IoError(GeotrackError, OSError):
    """An input file could not be read or an output could not be written."""


class InvalidTransform(GeotrackError, ValueError):
    """A rotation block is not a proper orthonormal matrix."""
