"""Exception hierarchy shared by every module."""


class PgapError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 3


class DimensionError(PgapError, ValueError):
    pass


class EmptyInputError(PgapError, ValueError):
    exit_code = 2


class DegenerateDescriptorError(PgapError, ArithmeticError):
    pass


class ContractError(PgapError, ValueError):
    pass


class ConfigError(PgapError, ValueError):
    exit_code = 2


class DataError(PgapError):
    """Anything wrong with data on disk or in memory."""

    exit_code = 2


class LoadError(DataError, FileNotFoundError):
    pass


class ConsistencyError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, path=None, offset: int | None = None):
        where = f" ({path} @ byte {offset})" if offset is not None else (f" ({path})" if path else "")
        super().__init__(message + where)
        self.path = path
        self.offset = offset


class InputError(DataError, ValueError):
    pass


class LabelError(DataError, ValueError):
    pass


class TrainingError(PgapError, RuntimeError):
    pass
