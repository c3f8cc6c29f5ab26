from dataclasses import dataclass, field


class BdrError(Exception):
    """
    Base class for errors raised by bdr.
    """


@dataclass
class SchemaError(BdrError):
    column: str
    path: str = ""

    def __str__(self):
        where = f" in {self.path}" if self.path else ""
        return f"missing column {self.column!r}{where}"


@dataclass
class ParseError(BdrError):
    row: int  # 0-based data row (header excluded)
    column: str
    value: str
    reason: str = "unparseable value"

    def __str__(self):
        return f"row {self.row}, column {self.column!r}: {self.reason} {self.value!r}"


class EmptyInputError(BdrError):
    pass


@dataclass
class DataFileError(BdrError):
    path: str
    reason: str

    def __str__(self):
        return f"{self.path}: {self.reason}"


@dataclass
class Violation:
    code: str
    message: str
    rows: tuple[int, ...] = ()

    def __str__(self):
        if not self.rows:
            return self.message
        shown = ", ".join(str(r) for r in self.rows[:10])
        more = "" if len(self.rows) <= 10 else f" (+{len(self.rows) - 10} more)"
        return f"{self.message} (rows {shown}{more})"


@dataclass
class ValidationError(BdrError):
    violations: list[Violation] = field(default_factory=list)

    def __str__(self):
        return "; ".join(str(v) for v in self.violations)


class FitError(BdrError):
    pass


class SingularFitError(FitError):
    def __init__(self, rank: int, columns: int):
        super().__init__(f"weighted design is rank deficient (rank {rank} < {columns})")
        self.rank = rank
        self.columns = columns


class SeparationError(FitError):
    def __init__(self, column: str, coefficient: float):
        super().__init__(
            f"perfect separation detected: coefficient of {column!r} "
            f"diverged ({coefficient:.3g})"
        )
        self.column = column
        self.coefficient = coefficient


class DomainError(BdrError, ValueError):
    pass


class PoolExhaustedError(BdrError):
    def __init__(self, needed: int, available: int, required: int):
        super().__init__(
            f"control pool exhausted: {required} controls required without "
            f"replacement but only {available} available ({needed} more needed)"
        )
        self.needed = needed


class ReplicateError(BdrError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"replicate {index} failed twice in a row: {cause}")
        self.index = index


class SimulationRunError(BdrError):
    def __init__(self, run: int, cause: Exception):
        super().__init__(f"simulation run {run} aborted: {cause}")
        self.run = run


class ReportSchemaError(BdrError):
    def __init__(self, path: str, found, expected):
        super().__init__(
            f"{path}: report schema version {found!r} is not supported "
            f"(expected {expected!r})"
        )
        self.found = found


class MalformedReportError(BdrError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: not a bdr report ({reason})")
        self.path = path


class StageError(BdrError):
    """
    A BdrError tagged with the command stage it was raised in.
    """

    def __init__(self, stage: str, cause: BdrError):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
