"""Exception hierarchy shared by all flowsched modules."""


class FlowschedError(Exception):
    """Base class for every error raised by the package."""


class NetworkError(FlowschedError):
    pass


class CyclicRoute(NetworkError):
    pass


class DanglingRoute(NetworkError):
    pass


class UnusedLink(NetworkError):
    pass


class NoRoute(NetworkError):
    pass


class UnknownLink(NetworkError, KeyError):
    pass


class TooLarge(FlowschedError):
    pass


class InfeasibleSplit(FlowschedError):
    pass


class NegativeLoad(FlowschedError):
    pass


class NegativeInput(FlowschedError, ValueError):
    pass


class EmptyScheduleSet(FlowschedError):
    pass


class ConflictViolation(FlowschedError):
    pass


class AssertionFailure(FlowschedError):
    """A runtime invariant check failed while assertions were in raise mode."""

    def __init__(self, name, slot, detail=""):
        self.name = name
        self.slot = slot
        self.detail = detail
        super().__init__(f"{name} violated at slot {slot}: {detail}")


class HorizonZero(FlowschedError):
    pass


class ConvergenceFailure(FlowschedError):
    pass


class DimensionMismatch(FlowschedError, ValueError):
    pass


class InsufficientSamples(FlowschedError):
    pass


class InsufficientData(FlowschedError):
    pass


class ConfigError(FlowschedError):
    pass
