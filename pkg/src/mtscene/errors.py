"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI prints it so that
callers can branch on the failure kind without parsing messages.
"""


class SceneError(Exception):
    category = "error"
    exit_code = 1


class ConfigError(SceneError, ValueError):
    category = "config"
    exit_code = 2


class ShapeError(SceneError, ValueError):
    category = "shape"
    exit_code = 3


class DataError(SceneError, ValueError):
    category = "data"
    exit_code = 4


class CheckpointError(SceneError, ValueError):
    category = "checkpoint"
    exit_code = 5


class NumericalError(SceneError, ArithmeticError):
    category = "numerical"
    exit_code = 6
