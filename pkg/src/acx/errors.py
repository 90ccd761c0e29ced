"""Exception types shared across the package.

Every error that maps to a CLI exit code derives from ``AcxError``; the CLI
inspects ``exit_code`` instead of matching on class names.
"""

from __future__ import annotations

from dataclasses import dataclass


class AcxError(Exception):
    exit_code = 3


class ParseError(AcxError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.message = message
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class SchemaError(AcxError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class UnsupportedMethod(AcxError):
    pass


# panel-store


@dataclass(frozen=True)
class RowViolation:
    kind: str  # DuplicateUnitTime | NonFiniteOutcome | OffGridTime | MissingColumn | ...
    rows: tuple[int, ...]
    detail: str

    def __str__(self) -> str:
        rows = ",".join(str(r) for r in self.rows)
        return f"{self.kind}[{rows}]: {self.detail}" if rows else f"{self.kind}: {self.detail}"


class IngestError(AcxError):
    def __init__(self, violations: list[RowViolation]):
        self.violations = list(violations)
        super().__init__(f"{len(self.violations)} violation(s): " + "; ".join(map(str, self.violations[:10])))

    @property
    def kinds(self) -> list[str]:
        return [v.kind for v in self.violations]


class NoControlUnits(AcxError):
    pass


# numerics


class NumericsError(AcxError):
    pass


class RankDeficient(NumericsError):
    def __init__(self, columns):
        self.columns = tuple(int(c) for c in columns)
        super().__init__(f"design is rank deficient; collinear columns {self.columns}")


class SingleCluster(NumericsError):
    pass


class Separation(NumericsError):
    pass


class NoVariation(NumericsError):
    pass


class SingularBlock(NumericsError):
    pass


# audit / estimators


class MissingAttestation(AcxError):
    def __init__(self, ids):
        self.ids = tuple(sorted(ids))
        super().__init__("missing attestation for: " + ", ".join(self.ids))


class ZeroVariance(AcxError):
    def __init__(self, covariate: str):
        self.covariate = covariate
        super().__init__(f"covariate {covariate!r} has zero variance in both groups")


class EstimationError(AcxError):
    pass


class EmptyCell(EstimationError):
    def __init__(self, which: str):
        self.which = which
        super().__init__(f"empty cell: {which}")


class CohortTooSmall(EstimationError):
    pass


class TooFewPeriods(EstimationError):
    pass


# commitment / ledger / report


class CommitmentError(AcxError):
    pass


class AuditMissing(CommitmentError):
    pass


class AuditBlocked(CommitmentError):
    exit_code = 2


class CriterionInvalid(CommitmentError):
    pass


class AlreadyLocked(CommitmentError):
    pass


class UnknownMetric(ParseError):
    def __init__(self, name: str, position: int | None = None):
        self.name = name
        self.position = position
        super().__init__(f"unknown metric {name!r}", None, position)


class LedgerError(AcxError):
    exit_code = 4


class ChainMismatch(LedgerError):
    pass


class ConcurrentWriter(LedgerError):
    exit_code = 3


class GateRefused(AcxError):
    exit_code = 2


class InvalidSpec(AcxError):
    pass


class MissingPlot(AcxError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"plot file missing: {name}")
