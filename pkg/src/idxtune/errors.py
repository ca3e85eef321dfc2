"""Exception hierarchy shared by every module."""


class IdxTuneError(Exception):
    """Base class for all errors raised by idxtune."""


class SchemaError(IdxTuneError):
    """Unknown table or column, or stats that violate their invariants."""

    def __init__(self, message: str, position: int | None = None):
        self.message = message
        self.position = position
        super().__init__(message)


class ParseError(IdxTuneError):
    """SQL text outside the supported grammar."""

    def __init__(self, message: str, position: int | None = None, text: str | None = None):
        self.message = message
        self.position = position
        self.text = text
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"{message}{where}")


class UnsupportedConstruct(ParseError):
    """Valid SQL that the single-block grammar does not cover (subqueries, OR, ...)."""


class BudgetExhausted(IdxTuneError):
    """An armed what-if budget would be exceeded by the next optimizer call."""


class CapabilityError(IdxTuneError):
    """The engine adapter does not support the requested operation."""


class GuardError(IdxTuneError):
    """A search was asked to enumerate more than its guard allows."""


class InsufficientData(IdxTuneError):
    """Training or forecasting input is too small."""


class ModelFormatError(IdxTuneError):
    """A serialized model is malformed or was built for another feature schema."""


class PlanValidationError(IdxTuneError):
    """A tuning plan is cyclic, has unbound ports, or the request is contradictory."""


class PlanExecutionError(IdxTuneError):
    """A tuning-plan node failed; carries the node id and upstream artifacts."""

    def __init__(self, node_id: str, cause: BaseException, artifacts: dict):
        self.node_id = node_id
        self.cause = cause
        self.artifacts = artifacts
        super().__init__(f"node {node_id!r} failed: {cause}")


class InputError(IdxTuneError):
    """A workload, schema, config or model file is malformed; carries its location."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None,
                 column: int | None = None):
        self.message = message
        self.path = path
        self.line = line
        self.column = column
        where = path or "<input>"
        if line is not None:
            where += f":{line}"
            if column is not None:
                where += f":{column}"
        super().__init__(f"{where}: {message}")
