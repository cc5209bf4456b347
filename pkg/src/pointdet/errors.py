class PointDetError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(PointDetError, ValueError):
    """A file or record does not follow its documented layout."""


class ConfigError(PointDetError, ValueError):
    """A configuration document is invalid."""
