"""Exception families. Each carries the CLI exit code for its family."""


class FedEDError(Exception):
    exit_code = 1


class ConfigError(FedEDError, ValueError):
    exit_code = 2


class PartitionError(ConfigError):
    pass


class ShapeError(FedEDError, ValueError):
    exit_code = 2


class IngestionError(FedEDError, ValueError):
    exit_code = 3


class EvaluationError(IngestionError):
    pass


class TrainingDivergenceError(FedEDError, ArithmeticError):
    exit_code = 4


class ReportIOError(FedEDError, OSError):
    exit_code = 5


class UsageError(FedEDError, ValueError):
    exit_code = 1


class PriorMismatchError(FedEDError, ValueError):
    """A batch label falls in the client's empty-class set."""

    exit_code = 4
