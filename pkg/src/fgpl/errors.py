"""Exception hierarchy for the localization engine."""


class FGPLError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateSegment(FGPLError, ValueError):
    pass


class DegenerateProjection(FGPLError, ValueError):
    """A 3D point coincides with the camera center."""


class AntipodalSegment(FGPLError, ValueError):
    """A 3D segment passes through the camera center."""


class DegenerateConfiguration(FGPLError, ValueError):
    pass


class InsufficientStructure(FGPLError):
    """Fewer than three dominant directions could be found."""


class EmptyCluster(FGPLError):
    pass


class EmptyInput(FGPLError, ValueError):
    pass


class DensityViolation(FGPLError):
    pass


class GridMismatch(FGPLError, ValueError):
    pass


class EmptyPool(FGPLError):
    pass


class TooFewMatches(FGPLError):
    pass


class AllCandidatesFailed(FGPLError):
    pass


class PoseOutsideRoom(FGPLError, ValueError):
    pass


class CacheFormatError(FGPLError):
    pass


class BadMagic(CacheFormatError):
    pass


class UnsupportedVersion(CacheFormatError):
    pass
