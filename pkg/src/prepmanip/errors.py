"""Exception hierarchy shared across the package."""


class PrepManipError(Exception):
    """Base class for all package errors."""


class DegenerateInput(PrepManipError, ValueError):
    pass


class ZeroAxis(PrepManipError, ValueError):
    pass


class BadShapeParams(PrepManipError, ValueError):
    pass


class PlacementInfeasible(PrepManipError):
    pass


class EmptyScene(PrepManipError):
    pass


class NoFixedLink(PrepManipError):
    pass


class NotGrasped(PrepManipError):
    pass


class NoMovableVisible(PrepManipError):
    pass


class ObjectNotOnTable(PrepManipError):
    pass


class NoOverhang(PrepManipError):
    pass


class NotAPlate(PrepManipError):
    pass


class InsufficientData(PrepManipError):
    pass


class IncompleteTrajectory(PrepManipError):
    pass


class CorruptManifest(PrepManipError):
    pass


class NonFiniteLoss(PrepManipError, FloatingPointError):
    def __init__(self, message, batch_id=None):
        super().__init__(message)
        self.batch_id = batch_id


class NonFiniteGradient(PrepManipError, FloatingPointError):
    pass


class QuotaUnreachable(PrepManipError):
    pass


class MissingCheckpoint(PrepManipError):
    pass


class BadSplit(PrepManipError, ValueError):
    pass
