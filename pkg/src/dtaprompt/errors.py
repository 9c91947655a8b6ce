"""Exception hierarchy. Each class maps to a distinct CLI exit code."""


class DtaError(Exception):
    exit_code = 1


class DimensionError(DtaError, ValueError):
    exit_code = 10


class StructuralError(DtaError, ValueError):
    exit_code = 11


class DomainError(DtaError, ValueError):
    exit_code = 12


class ContractError(DtaError, ValueError):
    exit_code = 13


class ModelConfigError(DtaError, ValueError):
    exit_code = 14


class TrainingError(DtaError, RuntimeError):
    exit_code = 15


class ParseError(DtaError, ValueError):
    """SMILES grammar violation; ``offset`` is the byte position in the input."""

    exit_code = 16

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.reason = message
        self.offset = offset


class InputError(DtaError, ValueError):
    exit_code = 17


class DataError(DtaError, ValueError):
    exit_code = 18


class ConfigError(DtaError, ValueError):
    exit_code = 19


class CheckpointError(DtaError, ValueError):
    exit_code = 20


class UndefinedMetricError(DtaError, ValueError):
    exit_code = 21
