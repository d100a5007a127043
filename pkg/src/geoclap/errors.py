"""Exception types shared across the package."""


class GeoclapError(Exception):
    """Base class for all library errors."""


class ZeroVectorError(GeoclapError):
    """Vector has (near-)zero norm where a direction is required."""


class DimMismatchError(GeoclapError):
    """Embedding dimensions do not agree."""


class ShapeMismatchError(GeoclapError):
    """Tensor shapes are incompatible for the requested operation."""


class NonScalarRootError(GeoclapError):
    """backward() was called on a non-scalar node."""


class NonFiniteValueError(GeoclapError):
    """A numeric evaluation produced NaN or infinity."""


class CorruptCheckpointError(GeoclapError):
    """Checkpoint file failed integrity verification."""


class UnsupportedFormatError(GeoclapError):
    """Input file is not in a supported format."""


class SampleRateMismatchError(GeoclapError):
    """Waveform sample rate does not match the configured rate."""


class ConfigError(GeoclapError):
    """Configuration values are inconsistent or out of range."""


class GeocodeUnavailableError(GeoclapError):
    """Reverse geocoding endpoint could not be reached after retries."""


class InvalidCoordinateError(GeoclapError):
    """Latitude/longitude outside world bounds."""


class TileTooSmallError(GeoclapError):
    """Image tile smaller than the requested crop."""


class MisalignedBatchError(GeoclapError):
    """Paired batches differ in size or id alignment."""


class NonSquareError(GeoclapError):
    """Similarity matrix must be square with aligned ground truth."""


class EmptyInputError(GeoclapError):
    """Operation requires at least one element."""


class EmptyGridError(GeoclapError):
    """Bounding box extent is smaller than the tile stride."""


class QueryLimitExceededError(GeoclapError):
    """More queries supplied than the composite map supports."""
