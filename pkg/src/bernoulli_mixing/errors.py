"""Exception types shared across the package."""


class MixingError(Exception):
    """Base class for every error raised by this package."""


# maps
class MapError(MixingError):
    pass


class OverlapError(MapError):
    pass


class CoverageError(MapError):
    pass


class BoundaryError(MapError):
    pass


class NonCubeError(MapError):
    pass


class DepthError(MapError):
    pass


# kernels / grids
class ResolutionError(MixingError):
    pass


class UnsupportedError(MixingError):
    pass


class SizeMismatchError(MixingError):
    pass


class AlignmentError(MixingError):
    pass


class AlignmentWarning(UserWarning):
    pass


# certificates
class CertificateFailure(MixingError):
    pass


class PersistenceFailure(MixingError):
    pass


class DomainError(MixingError):
    pass


# measurements
class NonConvergence(MixingError):
    pass


class PowerIterationStall(MixingError):
    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class InsufficientData(MixingError):
    pass


class CutoffOverflow(MixingError):
    pass


# orchestration
class ConfigError(MixingError):
    pass


class CheckFailure(MixingError):
    pass
