"""Exception types raised across the package."""


class ConveyorGraspError(Exception):
    """Base class for all package errors."""


class EmptyCloud(ConveyorGraspError, ValueError):
    pass


class InsufficientGeometry(ConveyorGraspError):
    """Fewer antipodal grasps than requested could be found."""


class UnknownCatalog(ConveyorGraspError, KeyError):
    pass


class ScreenerUnavailable(ConveyorGraspError):
    pass


class NoMatches(ConveyorGraspError):
    """No catalog index could be recognised in a screener answer."""


class DegenerateInput(ConveyorGraspError, ValueError):
    pass


class EmptySelection(ConveyorGraspError, ValueError):
    pass


class InvalidWindow(ConveyorGraspError, ValueError):
    pass


class InvalidTimes(ConveyorGraspError, ValueError):
    pass


class EmptyClutter(ConveyorGraspError, ValueError):
    pass


class ClutterNeverArrives(ConveyorGraspError):
    pass


class CenterlineNotReached(ConveyorGraspError):
    pass


class NonBeltDisplacement(ConveyorGraspError, ValueError):
    pass


class BeltExhausted(ConveyorGraspError):
    """The clutter would leave the belt before a grasp could be timed."""


class NoFeasibleGrasp(ConveyorGraspError):
    pass


class ConfigError(ConveyorGraspError):
    """Invalid run configuration; ``location`` names the offending line or field."""

    def __init__(self, message, location=None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)
