"""Exception hierarchy shared by every layer of the package."""


class TwicsError(Exception):
    """Base class for all package errors."""


class ModelMisspecificationError(TwicsError, ValueError):
    """A population model produced an impossible value (e.g. a risk outside [0, 1])."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class CalibrationError(TwicsError):
    def __init__(self, message: str, bounds: tuple[float, float]):
        super().__init__(message)
        self.bounds = bounds


class EnrollmentConflictError(TwicsError):
    pass


class ConsentViolationError(TwicsError):
    pass


class CriteriaValidationError(TwicsError, ValueError):
    pass


class DuplicateCandidateError(TwicsError, ValueError):
    pass


class RecruitmentShortfallError(TwicsError):
    """A closed cohort ran out of eligible patients before reaching the target."""

    def __init__(self, message: str, achieved: int, target: int):
        super().__init__(message)
        self.achieved = achieved
        self.target = target


class ConfigurationError(TwicsError, ValueError):
    pass


class EstimationError(TwicsError):
    """An estimator could not produce a result on the supplied data."""


class SingularMatrixError(EstimationError):
    def __init__(self, message: str, collinear: list[int] | None = None):
        super().__init__(message)
        self.collinear = collinear or []


class SeparationError(EstimationError):
    pass


class UndefinedEstimateError(EstimationError):
    pass


class InstabilityError(EstimationError):
    def __init__(self, message: str, failures: int, total: int):
        super().__init__(message)
        self.failures = failures
        self.total = total


class InfeasibleDesignError(TwicsError, ValueError):
    pass


class CapacityError(TwicsError):
    def __init__(self, message: str, required_total: int, capacity: int):
        super().__init__(message)
        self.required_total = required_total
        self.capacity = capacity


class ScenarioFailure(TwicsError):
    pass
