"""Exception types shared across the package."""


class VideolaneError(Exception):
    """Base class for all package errors."""


class ShapeError(VideolaneError):
    """Operands have incompatible shapes or channel counts."""


class InvalidLane(VideolaneError):
    """A polyline cannot be interpreted as a lane."""


class IncompleteLane(InvalidLane):
    """An operation required a fully valid lane but got invalid points."""


class IncompleteMatrix(VideolaneError):
    """A lane matrix with missing entries was passed where a complete one is required."""


class InvalidDimension(VideolaneError):
    """A basis/coefficient dimension is out of range."""


class SingularSystem(VideolaneError):
    """A least-squares subproblem has singular normal equations."""


class EmptyDataset(VideolaneError):
    """Training was requested on an empty dataset."""


class EmptyVideo(VideolaneError):
    """Video inference was requested on zero frames."""


class TrackIdRequired(VideolaneError):
    """Video metrics need persistent ground-truth track ids."""


class ConfigError(VideolaneError):
    """A configuration value is invalid or unknown."""


class ParseError(VideolaneError):
    """A data file could not be parsed."""


class SchemaError(VideolaneError):
    """A data file parsed but violates the declared schema."""


class IoError(VideolaneError):
    """Reading or writing an artifact failed."""
