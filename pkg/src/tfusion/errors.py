"""Exception hierarchy shared by all engine modules."""


class EngineError(Exception):
    """Base class for every error raised by this package."""


class SizeError(EngineError):
    """Tensor shapes or dimensions do not agree."""


class GeometryError(EngineError):
    """Convolution/pooling geometry does not produce a valid output size."""


class ConfigError(EngineError):
    """Invalid or unknown configuration value."""


class DataError(EngineError):
    """Dataset or batch content is unusable (empty, degenerate, non-simplex)."""


class StratifyError(DataError):
    """A class has too few samples to stratify."""


class LabelError(DataError):
    """Label out of range or malformed one-hot row."""


class StateError(EngineError):
    """Operation called out of order (e.g. backward before forward)."""


class FormatError(EngineError):
    """A file (image or checkpoint) failed to parse."""


class VersionError(FormatError):
    """Checkpoint format version is not supported."""
