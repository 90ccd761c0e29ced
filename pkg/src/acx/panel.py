"""Long-format unit x time panels: schema declarations, CSV ingest, export."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kvfile
from .errors import IngestError, NoControlUnits, ParseError, RowViolation, SchemaError

NEVER = "never"


@dataclass(frozen=True)
class ProvenanceRecord:
    producer: str
    transformations: tuple[str, ...]
    documentation_present: bool
    aggregation_grain: str
    source_mix: Mapping[str, tuple[str, ...]] = field(default_factory=dict)  # group -> sources
    pre_aggregation_rows: int | None = None

    def to_dict(self) -> dict:
        return {
            "producer": self.producer,
            "transformations": list(self.transformations),
            "documentation_present": self.documentation_present,
            "aggregation_grain": self.aggregation_grain,
            "source_mix": {k: list(v) for k, v in sorted(self.source_mix.items())},
            "pre_aggregation_rows": self.pre_aggregation_rows,
        }

    def __hash__(self) -> int:
        return hash(kvfile.digest(self.to_dict()))


@dataclass(frozen=True)
class Observation:
    unit_id: str
    time: int
    outcome: float
    adoption: int | None
    covariates: Mapping[str, float | str]


@dataclass(frozen=True)
class SchemaDeclaration:
    unit: str
    time: str
    outcome: str
    adoption: str | None
    covariates: tuple[str, ...]
    categorical: Mapping[str, tuple[str, ...]]
    calendar: str
    grid: tuple[int, ...]
    provenance: ProvenanceRecord
    never: str = NEVER


def _parse_grid(text: str, where) -> tuple[int, ...]:
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            lo_i, hi_i = int(lo), int(hi)
        except ValueError:
            raise ParseError(f"bad grid range {text!r}", *where) from None
        if hi_i < lo_i:
            raise ParseError("grid range is empty", *where)
        return tuple(range(lo_i, hi_i + 1))
    try:
        values = json.loads(text)
    except json.JSONDecodeError:
        raise ParseError(f"bad grid {text!r}; expected lo..hi or a JSON array of integers", *where) from None
    if not isinstance(values, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in values):
        raise ParseError(f"bad grid {text!r}; expected lo..hi or a JSON array of integers", *where)
    return tuple(sorted(set(values)))


def _format_grid(grid: Sequence[int]) -> str:
    grid = tuple(grid)
    if grid and grid == tuple(range(grid[0], grid[-1] + 1)):
        return f"{grid[0]}..{grid[-1]}"
    return "[" + ", ".join(str(g) for g in grid) + "]"


_SCHEMA_KEYS = {"unit", "time", "outcome", "adoption", "covariates", "calendar", "grid", "never"}
_PROV_KEYS = {"producer", "transformations", "documentation_present", "aggregation_grain", "pre_aggregation_rows"}


def parse_schema(data: bytes | str) -> SchemaDeclaration:
    doc = kvfile.parse(data)
    sec = doc.get("schema")
    if sec is None:
        raise ParseError("missing [schema] section", 1, 1)
    problems: list[str] = []
    for key in sec.entries:
        if key not in _SCHEMA_KEYS:
            problems.append(f"UnknownKey: [schema] {key}")
    for key in ("unit", "time", "outcome", "calendar", "grid"):
        if key not in sec.entries:
            problems.append(f"MissingKey: [schema] {key}")
    prov = doc.get("provenance")
    if prov is None:
        problems.append("MissingSection: [provenance]")
    else:
        for key in prov.entries:
            if key not in _PROV_KEYS and not key.startswith("source_mix."):
                problems.append(f"UnknownKey: [provenance] {key}")
        for key in ("producer", "transformations", "documentation_present", "aggregation_grain"):
            if key not in prov.entries:
                # an absent transformations list is not the same as an empty one
                problems.append(f"MissingKey: [provenance] {key}")
    categorical: dict[str, tuple[str, ...]] = {}
    for csec in doc.with_prefix("categorical."):
        name = csec.name[len("categorical.") :]
        if set(csec.entries) != {"levels"}:
            problems.append(f"BadSection: [{csec.name}] must contain exactly 'levels'")
            continue
        categorical[name] = tuple(kvfile.parse_list(csec.entries["levels"], csec.where("levels")))
    for s in doc.sections:
        if s.name not in ("schema", "provenance") and not s.name.startswith("categorical."):
            problems.append(f"UnknownSection: [{s.name}]")
    if problems:
        raise SchemaError(problems)

    covariates = tuple(kvfile.parse_list(sec.entries.get("covariates", "[]"), sec.where("covariates")))
    for name in categorical:
        if name not in covariates:
            raise SchemaError([f"categorical dictionary for undeclared covariate {name!r}"])
    source_mix = {
        key[len("source_mix.") :]: tuple(kvfile.parse_list(v, prov.where(key)))
        for key, v in prov.entries.items()
        if key.startswith("source_mix.")
    }
    pre_rows = prov.entries.get("pre_aggregation_rows")
    provenance = ProvenanceRecord(
        producer=prov.entries["producer"],
        transformations=tuple(kvfile.parse_list(prov.entries["transformations"], prov.where("transformations"))),
        documentation_present=kvfile.parse_bool(prov.entries["documentation_present"], prov.where("documentation_present")),
        aggregation_grain=prov.entries["aggregation_grain"],
        source_mix=source_mix,
        pre_aggregation_rows=int(pre_rows) if pre_rows not in (None, "") else None,
    )
    return SchemaDeclaration(
        unit=sec.entries["unit"],
        time=sec.entries["time"],
        outcome=sec.entries["outcome"],
        adoption=sec.entries.get("adoption") or None,
        covariates=covariates,
        categorical=categorical,
        calendar=sec.entries["calendar"],
        grid=_parse_grid(sec.entries["grid"], sec.where("grid")),
        provenance=provenance,
        never=sec.entries.get("never", NEVER),
    )


def serialize_schema(s: SchemaDeclaration) -> bytes:
    head = [
        ("unit", s.unit),
        ("time", s.time),
        ("outcome", s.outcome),
    ]
    if s.adoption:
        head.append(("adoption", s.adoption))
    head += [
        ("covariates", kvfile.format_list(s.covariates)),
        ("calendar", s.calendar),
        ("grid", _format_grid(s.grid)),
        ("never", s.never),
    ]
    p = s.provenance
    prov = [
        ("producer", p.producer),
        ("transformations", kvfile.format_list(p.transformations)),
        ("documentation_present", "true" if p.documentation_present else "false"),
        ("aggregation_grain", p.aggregation_grain),
    ]
    prov += [(f"source_mix.{g}", kvfile.format_list(v)) for g, v in sorted(p.source_mix.items())]
    if p.pre_aggregation_rows is not None:
        prov.append(("pre_aggregation_rows", str(p.pre_aggregation_rows)))
    sections = [("schema", head), ("provenance", prov)]
    sections += [(f"categorical.{k}", [("levels", kvfile.format_list(v))]) for k, v in s.categorical.items()]
    return kvfile.render(sections)


class Panel:
    """Validated long-format panel, stored column-wise and sorted by (unit, time).

    Arrays are read-only. ``unit`` holds indices into ``unit_ids``; ``adoption``
    is per unit with ``None`` for never-adopters.
    """

    def __init__(
        self,
        unit_ids: Sequence[str],
        unit: np.ndarray,
        time: np.ndarray,
        outcome: np.ndarray,
        adoption: Sequence[int | None],
        covariates: Mapping[str, np.ndarray],
        categorical: Mapping[str, tuple[str, ...]],
        grid: Sequence[int],
        calendar: str,
        provenance: ProvenanceRecord,
        missing_outcome_rows: Sequence[int] = (),
    ):
        order = np.lexsort((time, unit))
        self.unit_ids = tuple(unit_ids)
        self.unit = _frozen(np.asarray(unit, dtype=np.int64)[order])
        self.time = _frozen(np.asarray(time, dtype=np.int64)[order])
        self.outcome = _frozen(np.asarray(outcome, dtype=np.float64)[order])
        self.adoption = tuple(None if a is None else int(a) for a in adoption)
        self.covariates = {k: _frozen(np.asarray(v)[order]) for k, v in covariates.items()}
        self.categorical = dict(categorical)
        self.grid = tuple(int(g) for g in grid)
        self.calendar = calendar
        self.provenance = provenance
        self.missing_outcome_rows = tuple(missing_outcome_rows)
        self.periods = tuple(int(t) for t in np.unique(self.time))
        adopt = np.array([np.inf if a is None else a for a in self.adoption], dtype=np.float64)
        self.adoption_by_unit = _frozen(adopt)
        self.adoption_by_row = _frozen(adopt[self.unit])

    @property
    def unit_count(self) -> int:
        return len(self.unit_ids)

    @property
    def n_obs(self) -> int:
        return int(self.outcome.size)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(self.covariates)

    @property
    def treated_unit(self) -> np.ndarray:
        return np.isfinite(self.adoption_by_unit)

    @property
    def treated_row(self) -> np.ndarray:
        return np.isfinite(self.adoption_by_row)

    @property
    def rows(self) -> list[Observation]:
        out = []
        for i in range(self.n_obs):
            u = int(self.unit[i])
            covs = {k: (str(v[i]) if k in self.categorical else float(v[i])) for k, v in self.covariates.items()}
            out.append(
                Observation(self.unit_ids[u], int(self.time[i]), float(self.outcome[i]), self.adoption[u], covs)
            )
        return out

    def wide(self) -> tuple[np.ndarray, tuple[int, ...]]:
        """Outcome matrix ``units x periods`` with NaN for unobserved cells."""
        pos = {t: j for j, t in enumerate(self.periods)}
        y = np.full((self.unit_count, len(self.periods)), np.nan)
        y[self.unit, [pos[int(t)] for t in self.time]] = self.outcome
        return y, self.periods

    def select(self, mask: np.ndarray) -> "Panel":
        """Rows where ``mask`` holds; units left without rows are dropped."""
        mask = np.asarray(mask, dtype=bool)
        keep_units = np.unique(self.unit[mask])
        remap = np.full(self.unit_count, -1, dtype=np.int64)
        remap[keep_units] = np.arange(keep_units.size)
        return Panel(
            [self.unit_ids[u] for u in keep_units],
            remap[self.unit[mask]],
            self.time[mask],
            self.outcome[mask],
            [self.adoption[u] for u in keep_units],
            {k: v[mask] for k, v in self.covariates.items()},
            self.categorical,
            self.grid,
            self.calendar,
            self.provenance,
            self.missing_outcome_rows,
        )

    def with_outcome(self, outcome: np.ndarray) -> "Panel":
        return Panel(
            self.unit_ids,
            self.unit,
            self.time,
            outcome,
            self.adoption,
            self.covariates,
            self.categorical,
            self.grid,
            self.calendar,
            self.provenance,
            self.missing_outcome_rows,
        )

    def schema(self) -> SchemaDeclaration:
        return SchemaDeclaration(
            unit="unit",
            time="time",
            outcome="outcome",
            adoption="adoption",
            covariates=self.covariate_names,
            categorical=self.categorical,
            calendar=self.calendar,
            grid=self.grid,
            provenance=self.provenance,
        )

    def digest(self) -> str:
        extra = {
            "provenance": self.provenance.to_dict(),
            "grid": list(self.grid),
            "calendar": self.calendar,
            "categorical": {k: list(v) for k, v in sorted(self.categorical.items())},
            "missing_outcome_rows": list(self.missing_outcome_rows),
        }
        return kvfile.sha256_hex(export_csv(self) + kvfile.canonical_bytes(extra))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Panel) and self.digest() == other.digest()

    def __hash__(self) -> int:
        return hash(self.digest())

    def __repr__(self) -> str:
        return f"Panel(units={self.unit_count}, periods={list(self.periods)}, n_obs={self.n_obs})"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def export_csv(panel: Panel) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["unit", "time", "outcome", "adoption", *panel.covariate_names])
    cov = [(k in panel.categorical, v) for k, v in panel.covariates.items()]
    for i in range(panel.n_obs):
        u = int(panel.unit[i])
        a = panel.adoption[u]
        row = [panel.unit_ids[u], int(panel.time[i]), repr(float(panel.outcome[i])), NEVER if a is None else a]
        row += [str(v[i]) if cat else repr(float(v[i])) for cat, v in cov]
        w.writerow(row)
    return buf.getvalue().encode("utf-8")


def ingest(csv_bytes: bytes | str, schema: SchemaDeclaration) -> Panel:
    """Validate a CSV against ``schema``; raises ``IngestError`` with every violation found.

    Rows with an empty outcome cell are excluded and their line numbers kept
    on the panel for disclosure; every other defect is a violation.
    """
    text = csv_bytes.decode("utf-8") if isinstance(csv_bytes, bytes) else csv_bytes
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError([RowViolation("MissingColumn", (), "empty file; header row required")]) from None
    header = [h.strip() for h in header]
    needed = [schema.unit, schema.time, schema.outcome, *([schema.adoption] if schema.adoption else []), *schema.covariates]
    missing = [c for c in needed if c not in header]
    if missing:
        raise IngestError([RowViolation("MissingColumn", (), f"column {c!r} not in header") for c in missing])
    col = {name: header.index(name) for name in needed}
    grid = set(schema.grid)

    violations: list[RowViolation] = []
    missing_outcome: list[int] = []
    units: list[str] = []
    times: list[int] = []
    outcomes: list[float] = []
    adoptions: list[int | None] = []
    lines: list[int] = []
    covs: dict[str, list] = {c: [] for c in schema.covariates}

    for lineno, raw in enumerate(reader, start=2):
        if not raw or all(not c.strip() for c in raw):
            continue
        if len(raw) != len(header):
            violations.append(RowViolation("RaggedRow", (lineno,), f"{len(raw)} fields, header has {len(header)}"))
            continue
        bad = False
        unit = raw[col[schema.unit]].strip()
        if not unit:
            violations.append(RowViolation("MissingUnit", (lineno,), "empty unit id"))
            bad = True
        tval = raw[col[schema.time]].strip()
        try:
            t = int(tval)
            if t not in grid:
                violations.append(RowViolation("OffGridTime", (lineno,), f"time {t} not on the {schema.calendar} grid"))
                bad = True
        except ValueError:
            violations.append(RowViolation("OffGridTime", (lineno,), f"time {tval!r} is not an integer grid index"))
            bad = True
        yval = raw[col[schema.outcome]].strip()
        y = math.nan
        if yval == "":
            missing_outcome.append(lineno)
            continue
        try:
            y = float(yval)
            if not math.isfinite(y):
                violations.append(RowViolation("NonFiniteOutcome", (lineno,), f"outcome {yval!r}"))
                bad = True
        except ValueError:
            violations.append(RowViolation("NonFiniteOutcome", (lineno,), f"outcome {yval!r} is not a number"))
            bad = True
        a: int | None = None
        if schema.adoption:
            aval = raw[col[schema.adoption]].strip()
            if aval == schema.never:
                a = None
            else:
                try:
                    a = int(aval)
                    if a not in grid:
                        violations.append(RowViolation("OffGridAdoption", (lineno,), f"adoption {a} not on the grid"))
                        bad = True
                except ValueError:
                    violations.append(
                        RowViolation("OffGridAdoption", (lineno,), f"adoption {aval!r} is neither a period nor {schema.never!r}")
                    )
                    bad = True
        row_cov = {}
        for name in schema.covariates:
            v = raw[col[name]].strip()
            if name in schema.categorical:
                if v not in schema.categorical[name]:
                    violations.append(RowViolation("UnknownLevel", (lineno,), f"{name}={v!r} not in dictionary"))
                    bad = True
                row_cov[name] = v
            else:
                try:
                    fv = float(v)
                    if not math.isfinite(fv):
                        raise ValueError
                    row_cov[name] = fv
                except ValueError:
                    violations.append(RowViolation("BadCovariate", (lineno,), f"{name}={v!r} is not a finite number"))
                    bad = True
        if bad:
            continue
        units.append(unit)
        times.append(t)
        outcomes.append(y)
        adoptions.append(a)
        lines.append(lineno)
        for name in schema.covariates:
            covs[name].append(row_cov[name])

    seen: dict[tuple[str, int], list[int]] = {}
    for u, t, ln in zip(units, times, lines):
        seen.setdefault((u, t), []).append(ln)
    for (u, t), lns in seen.items():
        if len(lns) > 1:
            violations.append(RowViolation("DuplicateUnitTime", tuple(lns), f"unit {u!r} at time {t}"))
    adopt_of: dict[str, int | None] = {}
    for u, a, ln in zip(units, adoptions, lines):
        if u in adopt_of and adopt_of[u] != a:
            violations.append(RowViolation("InconsistentAdoption", (ln,), f"unit {u!r} has more than one adoption time"))
        adopt_of.setdefault(u, a)
    if violations:
        violations.sort(key=lambda v: (v.rows[0] if v.rows else 0, v.kind))
        raise IngestError(violations)

    unit_ids = sorted(set(units))
    index = {u: i for i, u in enumerate(unit_ids)}
    cov_arrays = {
        name: (np.array(vals, dtype=object).astype(str) if name in schema.categorical else np.array(vals, dtype=np.float64))
        for name, vals in covs.items()
    }
    return Panel(
        unit_ids,
        np.array([index[u] for u in units], dtype=np.int64),
        np.array(times, dtype=np.int64),
        np.array(outcomes, dtype=np.float64),
        [adopt_of[u] for u in unit_ids],
        cov_arrays,
        dict(schema.categorical),
        schema.grid,
        schema.calendar,
        schema.provenance,
        missing_outcome,
    )


@dataclass(frozen=True)
class GroupPartition:
    treated: tuple[str, ...]
    control: tuple[str, ...]
    cohorts: Mapping[int, tuple[str, ...]]


def group_partition(panel: Panel, require_control: bool = True) -> GroupPartition:
    treated = tuple(u for u, a in zip(panel.unit_ids, panel.adoption) if a is not None)
    control = tuple(u for u, a in zip(panel.unit_ids, panel.adoption) if a is None)
    cohorts: dict[int, list[str]] = {}
    for u, a in zip(panel.unit_ids, panel.adoption):
        if a is not None:
            cohorts.setdefault(a, []).append(u)
    if require_control and not control:
        raise NoControlUnits("every unit adopts; no never-treated controls")
    return GroupPartition(treated, control, {g: tuple(v) for g, v in sorted(cohorts.items())})
