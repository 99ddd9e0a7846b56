"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MMRNNError(Exception):
    exit_code = 1


class ConfigurationError(MMRNNError, ValueError):
    exit_code = 1


class DimensionError(MMRNNError, ValueError):
    exit_code = 1


class DataError(MMRNNError, ValueError):
    exit_code = 2


class StateError(MMRNNError, RuntimeError):
    exit_code = 1


class NumericalError(MMRNNError, ArithmeticError):
    exit_code = 3
