"""Exception hierarchy shared across the package."""


class GeoschedError(Exception):
    """Base class for every error raised by geosched."""


class ValidationError(GeoschedError):
    """Input rejected before any simulation ran (CLI exit code 2)."""


class MalformedConfig(ValidationError):
    pass


class MissingTrace(ValidationError):
    pass


class InfeasibleScenario(ValidationError):
    def __init__(self, task_id: int, tau: int, car: float, capacity: float):
        self.task_id = task_id
        self.tau = tau
        self.car = car
        self.capacity = capacity
        super().__init__(
            f"task {task_id} at epoch {tau}: arrival rate {car:.6g}/h exceeds "
            f"cloud execution rate {capacity:.6g}/h"
        )


class BadAmplitude(ValidationError):
    pass


class MissingCoeffs(ValidationError):
    pass


class BadUtil(GeoschedError):
    pass


class CoolingCapacityExceeded(GeoschedError):
    pass


class InfeasibleRate(GeoschedError):
    pass


class InfeasibleProfile(GeoschedError):
    pass


class NoFeasibleStrategy(GeoschedError):
    pass


class TooLarge(GeoschedError):
    pass


class NonFiniteParams(GeoschedError):
    pass


class BatchConsumed(GeoschedError):
    """Raised when a rollout batch is fed to a second PPO update."""


class SolverError(GeoschedError):
    """Solver-side failure (CLI exit code 3)."""


class SolverBudgetExceeded(SolverError):
    pass


class MissingCheckpoint(SolverError):
    pass
