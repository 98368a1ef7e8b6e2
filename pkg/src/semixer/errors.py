"""Exception types raised across the package."""


class SemixerError(Exception):
    pass


class ShapeError(SemixerError, ValueError):
    pass


class ConfigError(SemixerError, ValueError):
    pass


class EvaluationError(SemixerError, ArithmeticError):
    """A function under evaluation produced a non-finite value."""


class LoadError(SemixerError, ValueError):
    pass


class SplitError(SemixerError, ValueError):
    pass


class WindowError(SemixerError, ValueError):
    pass


class TrainingError(SemixerError, RuntimeError):
    pass


class CheckpointError(SemixerError, ValueError):
    pass
