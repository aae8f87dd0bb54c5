"""Exception hierarchy. Each family maps to one CLI exit code."""


class GraphCLError(Exception):
    exit_code = 1


class ConfigError(GraphCLError, ValueError):
    exit_code = 2


class DatasetTooSmallError(ConfigError):
    pass


class NumericError(GraphCLError, ArithmeticError):
    exit_code = 3


class DegenerateWeightsError(NumericError):
    pass


class SingularGraphError(NumericError):
    pass


class DataIOError(GraphCLError, OSError):
    exit_code = 4


class LengthMismatchError(DataIOError):
    pass


class NonFiniteDataError(DataIOError):
    pass


class MissingSidecarError(DataIOError):
    pass


class ShapeError(GraphCLError, ValueError):
    exit_code = 3


class LabelError(ShapeError):
    pass


class StateError(GraphCLError, RuntimeError):
    exit_code = 3


class BatchTooSmallError(ShapeError):
    pass
