"""Exception types raised by the simulator."""


class DognoseError(Exception):
    """Base class for all simulator errors."""


class GeometryError(DognoseError):
    pass


class DomainTooSmall(GeometryError):
    pass


class ResolutionTooCoarse(GeometryError):
    pass


class PortBlocked(GeometryError):
    pass


class CflViolation(DognoseError):
    pass


class ProjectionDiverged(DognoseError):
    pass


class StabilityViolation(DognoseError):
    pass


class EmptyTrace(DognoseError):
    pass


class DegenerateRun(DognoseError):
    pass


class BudgetExceeded(DognoseError):
    pass


class SimulationError(DognoseError):
    """Wraps an error raised inside the time loop with its location."""

    def __init__(self, module, step, t, cause):
        self.module = module
        self.step = step
        self.t = t
        self.cause = cause
        super().__init__(f"{module} failed at step {step} (t={t:.6g} s): {cause}")

    def __reduce__(self):
        # keep the error intact across worker processes
        return type(self), (self.module, self.step, self.t, self.cause)
