"""Exception types shared across the package."""


class BSDError(Exception):
    """Base class for all package errors."""


class DomainError(BSDError, ValueError):
    """An input lies outside the domain an operation is defined on."""


class InvalidGeometryError(DomainError):
    pass


class NoSolutionError(BSDError):
    """A design or calibration problem has no solution within its bounds."""


class InfeasibleError(NoSolutionError):
    """A static-optimization frame cannot meet the required torques.

    ``max_torque`` holds the largest achievable torque per joint.
    """

    def __init__(self, message, max_torque=None, frame_index=None):
        super().__init__(message)
        self.max_torque = max_torque
        self.frame_index = frame_index


class FitError(BSDError):
    pass


class TrainingError(BSDError):
    pass


class SchemaError(BSDError, ValueError):
    """A CSV or model file does not match its expected layout."""


class StreamError(BSDError):
    """Frames arrived out of time order."""


class ConfigError(BSDError):
    pass
