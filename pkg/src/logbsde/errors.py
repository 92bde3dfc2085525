"""Exception hierarchy. The CLI maps each family onto a fixed exit code."""


class LogBsdeError(Exception):
    exit_code = 2


class ConfigError(LogBsdeError, ValueError):
    """Invalid configuration or invalid constructor arguments."""

    exit_code = 1

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class DomainError(LogBsdeError, ValueError):
    """Argument outside the domain where an operation is defined."""

    exit_code = 1


class NumericalError(LogBsdeError):
    exit_code = 2


class SimulationError(NumericalError):
    """Non-finite state produced by a forward scheme."""

    def __init__(self, message, path=None, step=None):
        self.path = path
        self.step = step
        if path is not None:
            message = f"{message} (path={path}, step={step})"
        super().__init__(message)


class RegressionError(NumericalError):
    pass


class SingularMatrixError(NumericalError):
    def __init__(self, message, point=None):
        self.point = point
        super().__init__(message)
