"""Exception hierarchy shared by the simulator, trainer and experiment runner."""


class QRUError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for this category."""

    exit_code = 1


class ConfigError(QRUError, ValueError):
    exit_code = 2


class InputError(QRUError, ValueError):
    exit_code = 2


class DataError(QRUError):
    exit_code = 3


class DivergenceError(QRUError, FloatingPointError):
    """Training produced a non-finite loss. ``trace`` holds the partial TrainingTrace."""

    exit_code = 4

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
