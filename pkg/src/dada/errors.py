"""Exception hierarchy.

Each error carries the CLI exit code it maps to, so the command runner can
translate any module failure into a machine-readable record.
"""


class DadaError(Exception):
    exit_code = 1


class ConfigError(DadaError):
    exit_code = 2


class DataError(DadaError):
    exit_code = 3


class MalformedFile(DataError):
    pass


class EmptySeries(DataError):
    pass


class SeriesTooShort(DataError):
    pass


class IndivisibleWindow(DataError):
    pass


class EmptyStream(DataError):
    pass


class RetryBudgetExhausted(DataError):
    pass


class TrainingError(DadaError):
    exit_code = 4


class NonFiniteLoss(TrainingError):
    pass


class EvaluationError(DadaError):
    exit_code = 5


class NoGroundTruthEvents(EvaluationError):
    pass


class SingleClass(EvaluationError):
    pass
