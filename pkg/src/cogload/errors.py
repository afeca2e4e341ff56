"""Exception hierarchy. Each family maps onto one CLI exit code."""


class CogloadError(Exception):
    exit_code = 1


class ConfigError(CogloadError):
    exit_code = 2


class DataError(CogloadError):
    exit_code = 3


class ValidationError(DataError):
    pass


class FormatError(DataError):
    pass


class CorruptionError(DataError):
    pass


class NumericalError(CogloadError):
    exit_code = 4

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration
