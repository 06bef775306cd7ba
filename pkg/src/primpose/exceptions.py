"""Exception hierarchy shared by all modules."""


class PrimPoseError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(PrimPoseError, ValueError):
    pass


class BehindCameraError(PrimPoseError, ValueError):
    """A point that must be projected lies at or behind the camera plane."""


class InvalidDepthError(PrimPoseError, ValueError):
    pass


class DegenerateInputError(PrimPoseError, ValueError):
    """Correspondences do not constrain the requested model."""


class NoConsensusError(PrimPoseError, RuntimeError):
    pass


class NoSolutionError(PrimPoseError, RuntimeError):
    pass


class NumericalError(PrimPoseError, ArithmeticError):
    pass


class EmptyObjectError(PrimPoseError, ValueError):
    pass


class ConfigError(PrimPoseError, ValueError):
    pass


class DatasetParseError(PrimPoseError, ValueError):
    """Malformed dataset file; carries the offending file and field."""

    def __init__(self, path, field, reason):
        self.path = str(path)
        self.field = field
        self.reason = reason
        super().__init__(f"{self.path}: field '{field}': {reason}")
