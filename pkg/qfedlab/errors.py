__all__ = ['QFedLabException', 'ConfigurationError', 'ShapeError', 'WireIndexError',
           'TrainingDivergenceError', 'ProtocolError', 'UsageError', 'StatisticalPowerError',
           'UndefinedMetricError', 'DataFormatError']


class QFedLabException(Exception):
    pass


class ConfigurationError(QFedLabException, ValueError):
    pass


class ShapeError(QFedLabException, ValueError):
    pass


class WireIndexError(QFedLabException, IndexError):
    pass


class TrainingDivergenceError(QFedLabException, ArithmeticError):
    pass


class ProtocolError(QFedLabException):
    """Raised when federation nodes disagree about the parameter ID space."""
    pass


class UsageError(QFedLabException, RuntimeError):
    pass


class StatisticalPowerError(QFedLabException, ValueError):
    pass


class UndefinedMetricError(QFedLabException, ValueError):
    pass


class DataFormatError(QFedLabException, ValueError):
    pass
