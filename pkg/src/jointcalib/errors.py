"""Exception hierarchy shared by every stage of the calibration pipeline."""


class CalibrationError(Exception):
    """Base class. ``stage`` names the pipeline step that failed."""

    stage = "calibrate"


# geometry
class GeometryError(CalibrationError):
    stage = "geometry"


class NonRotationMatrix(GeometryError):
    pass


class OutsideValidityRadius(GeometryError):
    pass


class NoConvergence(GeometryError):
    pass


class BehindCamera(GeometryError):
    pass


# board / scene
class InvalidBoardSpec(CalibrationError):
    stage = "config"


class InvalidPitch(InvalidBoardSpec):
    pass


class SceneError(CalibrationError):
    stage = "config"


class BoardNotVisible(SceneError):
    stage = "simulate"


# lidar detection
class DetectionError(CalibrationError):
    stage = "detect"


class EmptyROI(DetectionError):
    pass


class NoValidPlane(DetectionError):
    pass


class DegenerateTarget(DetectionError):
    pass


# intrinsic initialization
class InitializationError(CalibrationError):
    stage = "initialize"

    def __init__(self, message, view=None):
        if view is not None:
            message = f"view {view}: {message}"
        super().__init__(message)
        self.view = view


class DegenerateConfiguration(InitializationError):
    pass


class DegenerateMotion(InitializationError):
    pass


class NotPositiveDefinite(InitializationError):
    pass


class InsufficientViews(InitializationError):
    pass


# optimization
class OptimizationError(CalibrationError):
    stage = "optimize"


class DimensionMismatch(OptimizationError):
    pass


class Diverged(OptimizationError):
    pass


class NotConverged(OptimizationError):
    pass


# reporting
class FrameConventionMismatch(CalibrationError):
    stage = "evaluate"
