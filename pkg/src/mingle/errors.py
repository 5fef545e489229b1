"""Exception types shared across the pipeline."""


class MingleError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(MingleError):
    """A record or value violates a documented invariant."""


class ParseError(MingleError):
    """A manifest or results line could not be decoded."""


class EmptyGroupError(MingleError):
    """An operation that needs at least one box received none."""


class EmptyRegionError(MingleError):
    """A box covers zero pixels after rounding and clamping."""


class MissingFileError(MingleError):
    """A referenced input file does not exist."""


class MissingAssetError(MingleError):
    """A scene's RGB or depth file could not be read."""


class DimensionMismatchError(MingleError):
    """An image's dimensions disagree with the scene manifest."""


class UnsupportedFormatError(MingleError):
    """An image file is not 8-bit single-channel."""


class TemplateError(MingleError):
    """A prompt template has unknown or missing placeholders."""


class RemoteUnavailableError(MingleError):
    """The remote classifier kept failing after all retries."""


class BackendError(MingleError):
    """The remote classifier returned a malformed response."""


class TooLargeError(MingleError):
    """Exhaustive clustering was asked for more persons than it enumerates."""


class CoverageMismatchError(MingleError):
    """A partition does not cover exactly the persons of its matrix."""


class ConfigError(MingleError):
    """A configuration value is out of range or inconsistent."""
