"""Exception hierarchy shared by all poselift modules."""


class PoseLiftError(ValueError):
    """Base class for every error raised by poselift."""


# skeleton
class CycleDetected(PoseLiftError):
    pass


class MultipleRoots(PoseLiftError):
    pass


class IndexOutOfRange(PoseLiftError):
    pass


class InvariantViolation(PoseLiftError):
    pass


class ParseError(PoseLiftError):
    """Malformed input file. Message carries the line / row / field."""


# poses and representations
class WrongFrame(PoseLiftError):
    pass


class SkeletonMismatch(PoseLiftError):
    pass


class NonAffineWeights(PoseLiftError):
    pass


class InsufficientSamples(PoseLiftError):
    pass


# geometry
class BehindCamera(PoseLiftError):
    pass


class DegenerateSpread(PoseLiftError):
    pass


class NonPositiveDepth(PoseLiftError):
    pass


# metrics
class FrameMismatch(PoseLiftError):
    pass


class BadRange(PoseLiftError):
    pass


class DegenerateConfiguration(PoseLiftError):
    pass


class EmptyAfterSampling(PoseLiftError):
    pass


class LabelMismatch(PoseLiftError):
    pass


# analysis
class TooFewPoses(PoseLiftError):
    pass


class IncompleteMap(PoseLiftError):
    pass


class InsufficientFrames(PoseLiftError):
    pass


class RankDeficient(InsufficientFrames):
    """Normal equations are singular; more (or more varied) frames are needed."""


class ShapeMismatch(PoseLiftError):
    pass


# augmentation
class DimMismatch(PoseLiftError):
    pass


class AssetDecodeError(PoseLiftError):
    pass


class BadProportions(PoseLiftError):
    pass
