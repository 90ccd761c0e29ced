"""Method-data contracts: requirement checklists with stop/flag/branch policies."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Iterable, Mapping

from . import kvfile
from .errors import ParseError, SchemaError, UnsupportedMethod


class MethodKind(str, enum.Enum):
    DiD2x2 = "DiD2x2"
    DiDStaggered = "DiDStaggered"
    PSM = "PSM"
    ITS = "ITS"
    RDD = "RDD"
    IV = "IV"

    @property
    def taxonomy_only(self) -> bool:
        return self in (MethodKind.RDD, MethodKind.IV)


class PolicyKind(str, enum.Enum):
    STOP = "stop"
    FLAG = "flag"
    BRANCH = "branch"


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    target: str | None = None  # branch target: a method variant with a requirement set

    def render(self) -> str:
        return f"branch:{self.target}" if self.kind is PolicyKind.BRANCH else self.kind.value

    @classmethod
    def stop(cls) -> "Policy":
        return cls(PolicyKind.STOP)

    @classmethod
    def flag(cls) -> "Policy":
        return cls(PolicyKind.FLAG)

    @classmethod
    def branch(cls, target: str | MethodKind) -> "Policy":
        return cls(PolicyKind.BRANCH, MethodKind(target).value if isinstance(target, MethodKind) else target)


@dataclass(frozen=True)
class Binding:
    automatic: bool
    value: str  # diagnostic id when automatic, prompt text when attested

    def render(self) -> str:
        return ("auto:" if self.automatic else "attest:") + self.value

    @classmethod
    def auto(cls, diagnostic: str) -> "Binding":
        return cls(True, diagnostic)

    @classmethod
    def attest(cls, prompt: str) -> "Binding":
        return cls(False, prompt)


@dataclass(frozen=True)
class Requirement:
    id: str
    description: str
    policy: Policy
    binding: Binding
    source: str = ""


# Central defaults for every numeric threshold a diagnostic consults. A
# contract's [thresholds] section overrides individual keys.
DEFAULT_THRESHOLDS: Mapping[str, float] = {
    "pre_periods_stop_below": 2,  # fewer than this many pre-periods -> stop
    "pre_periods_testable": 3,  # at least this many -> slope test possible
    "pretrend_alpha": 0.10,
    "smd_flag": 0.1,
    "boundary_flag": 0.05,
    "break_alpha": 0.01,
    "support_drop": 0.75,  # post distinct-value share below this fraction of pre -> flag
    "overlap_flag": 0.02,
    "overlap_stop": 0.10,
    "its_min_periods": 3,
}


@dataclass(frozen=True)
class MethodDataContract:
    method: MethodKind
    requirements: tuple[Requirement, ...]
    authored_at: str
    author: str
    thresholds: Mapping[str, float] = field(default_factory=dict)  # overrides only

    def threshold(self, name: str) -> float:
        return self.thresholds.get(name, DEFAULT_THRESHOLDS[name])

    def requirement(self, rid: str) -> Requirement:
        for r in self.requirements:
            if r.id == rid:
                return r
        raise KeyError(rid)

    def __hash__(self) -> int:
        return hash((self.method, self.requirements, self.authored_at, self.author, tuple(sorted(self.thresholds.items()))))


# Diagnostic registry: which automatic checks exist and which methods may bind
# them. The audit engine implements exactly these ids (enforced by tests).
_DID = frozenset({MethodKind.DiD2x2, MethodKind.DiDStaggered})
_ALL = frozenset({MethodKind.DiD2x2, MethodKind.DiDStaggered, MethodKind.PSM, MethodKind.ITS})
DIAGNOSTIC_METHODS: Mapping[str, frozenset[MethodKind]] = {
    "unit_grain": _ALL,
    "provenance": _ALL,
    "pre_periods": _DID,
    "group_sources": _DID | {MethodKind.PSM},
    "parallel_trends": _DID,
    "balance": _DID | {MethodKind.PSM},
    "outcome_integrity": _ALL,
    "overlap": frozenset({MethodKind.PSM}),
    "staggering": frozenset({MethodKind.DiD2x2}),
    "control_cohort": frozenset({MethodKind.DiDStaggered}),
    "its_periods": frozenset({MethodKind.ITS}),
}

# Minimum requirement ids each method's contract must carry.
REQUIRED_ITEMS: Mapping[MethodKind, tuple[str, ...]] = {
    MethodKind.DiD2x2: ("unit-aggregation", "pre-periods", "group-definition", "pre-trends"),
    MethodKind.DiDStaggered: (
        "unit-aggregation",
        "pre-periods",
        "group-definition",
        "pre-trends",
        "robust-estimator",
        "control-cohort",
    ),
    MethodKind.ITS: ("outcome-consistency", "concurrent-interventions"),
    MethodKind.PSM: ("observables", "overlap"),
}

BUILTIN_AUTHOR = "acx builtin"
BUILTIN_TIMESTAMP = "2026-01-01T00:00:00Z"


def _req(rid, description, policy, binding, source) -> Requirement:
    return Requirement(rid, description, policy, binding, source)


def _common_items() -> list[Requirement]:
    return [
        _req(
            "unit-aggregation",
            "Unit of observation and any aggregation applied are declared; aggregated grains carry a standing caveat.",
            Policy.flag(),
            Binding.auto("unit_grain"),
            "method requirement: unit of analysis",
        ),
        _req(
            "provenance",
            "Producer, transformations and documentation of the dataset are declared.",
            Policy.flag(),
            Binding.auto("provenance"),
            "data audit: provenance",
        ),
    ]


def _did_items() -> list[Requirement]:
    return _common_items() + [
        _req(
            "pre-periods",
            "At least two pre-intervention periods; three or more for a testable pre-trend.",
            Policy.stop(),
            Binding.auto("pre_periods"),
            "method requirement: pre-period count",
        ),
        _req(
            "group-definition",
            "Treatment and control groups come from comparable declared sources.",
            Policy.stop(),
            Binding.auto("group_sources"),
            "method requirement: group construction",
        ),
        _req(
            "pre-trends",
            "Pre-period outcome trends are plotted by group and tested for slope equality.",
            Policy.flag(),
            Binding.auto("parallel_trends"),
            "method requirement: pre-trend inspection",
        ),
        _req(
            "baseline-balance",
            "Baseline covariates are compared across groups by standardized mean difference.",
            Policy.flag(),
            Binding.auto("balance"),
            "data audit: baseline comparison",
        ),
        _req(
            "outcome-integrity",
            "Outcome shows no coding break in the control group, boundary mass, or support collapse.",
            Policy.stop(),
            Binding.auto("outcome_integrity"),
            "data audit: outcome inspection",
        ),
    ]


def builtin_contract(method: MethodKind | str) -> MethodDataContract:
    """Canonical requirement list for a method with automated support."""
    method = MethodKind(method)
    if method.taxonomy_only:
        raise UnsupportedMethod(f"{method.value} is taxonomy-only; no builtin requirement list")
    if method is MethodKind.DiD2x2:
        reqs = _did_items() + [
            _req(
                "staggered-timing",
                "Adoption timing is checked for variation across units; more than one cohort branches to the staggered design.",
                Policy.branch(MethodKind.DiDStaggered),
                Binding.auto("staggering"),
                "method requirement: adoption timing",
            )
        ]
    elif method is MethodKind.DiDStaggered:
        reqs = _did_items() + [
            _req(
                "robust-estimator",
                "Primary estimate uses a heterogeneity-robust group-time estimator, not a single TWFE coefficient.",
                Policy.stop(),
                Binding.attest("The primary specification uses the group-time ATT estimator."),
                "method requirement: staggered estimator",
            ),
            _req(
                "control-cohort",
                "Comparison cohort is declared: never-treated or not-yet-treated.",
                Policy.stop(),
                Binding.attest("Answer never-treated or not-yet-treated to declare the comparison cohort."),
                "method requirement: comparison cohort",
            ),
            _req(
                "never-treated",
                "Never-treated units exist in sufficient number to serve as controls.",
                Policy.flag(),
                Binding.auto("control_cohort"),
                "method requirement: comparison cohort",
            ),
        ]
    elif method is MethodKind.PSM:
        reqs = _common_items() + [
            _req(
                "observables",
                "Selection into treatment operates on the observed matching variables.",
                Policy.stop(),
                Binding.attest("Selection into treatment is explained by the declared covariates."),
                "method requirement: selection on observables",
            ),
            _req(
                "construct-comparability",
                "Matching variables measure the same construct in both populations.",
                Policy.stop(),
                Binding.attest("Each matching variable means the same thing in treated and control records."),
                "method requirement: matching variables",
            ),
            _req(
                "group-definition",
                "Treatment and control groups come from comparable declared sources.",
                Policy.stop(),
                Binding.auto("group_sources"),
                "method requirement: group construction",
            ),
            _req(
                "baseline-balance",
                "Baseline covariates are compared across groups by standardized mean difference.",
                Policy.flag(),
                Binding.auto("balance"),
                "data audit: baseline comparison",
            ),
            _req(
                "overlap",
                "Treated propensities lie within the control group's propensity range.",
                Policy.stop(),
                Binding.auto("overlap"),
                "method requirement: common support",
            ),
        ]
    else:  # ITS
        reqs = _common_items() + [
            _req(
                "its-periods",
                "At least three periods on each side of the interruption.",
                Policy.stop(),
                Binding.auto("its_periods"),
                "data audit: temporal structure",
            ),
            _req(
                "outcome-consistency",
                "Outcome is measured consistently across the pre and post periods.",
                Policy.stop(),
                Binding.auto("outcome_integrity"),
                "method requirement: outcome consistency",
            ),
            _req(
                "concurrent-interventions",
                "No concurrent intervention could confound the level shift.",
                Policy.stop(),
                Binding.attest("No other intervention or measurement change coincides with the interruption."),
                "method requirement: concurrent interventions",
            ),
        ]
    return MethodDataContract(method, tuple(reqs), BUILTIN_TIMESTAMP, BUILTIN_AUTHOR)


BRANCH_TARGETS = frozenset({MethodKind.DiD2x2.value, MethodKind.DiDStaggered.value, MethodKind.PSM.value, MethodKind.ITS.value})


@dataclass(frozen=True)
class Violation:
    kind: str  # DuplicateId | DanglingBranch | UnknownDiagnostic | UnknownDiagnosticForMethod | ...
    requirement_id: str | None
    detail: str

    def __str__(self) -> str:
        where = f" ({self.requirement_id})" if self.requirement_id else ""
        return f"{self.kind}{where}: {self.detail}"


def validate_contract(c: MethodDataContract) -> list[Violation]:
    out: list[Violation] = []
    seen: set[str] = set()
    for r in c.requirements:
        if r.id in seen:
            out.append(Violation("DuplicateId", r.id, "requirement id used more than once"))
        seen.add(r.id)
        if not r.id:
            out.append(Violation("EmptyId", None, "requirement without id"))
        if r.policy.kind is PolicyKind.BRANCH:
            if r.policy.target not in BRANCH_TARGETS:
                out.append(Violation("DanglingBranch", r.id, f"branch target {r.policy.target!r} has no requirement set"))
        elif r.policy.target is not None:
            out.append(Violation("PolicyTarget", r.id, "only branch policies carry a target"))
        if r.binding.automatic:
            diag = r.binding.value
            if c.method.taxonomy_only:
                out.append(
                    Violation("TaxonomyOnlyMethod", r.id, f"{c.method.value} carries no automated diagnostics")
                )
            elif diag not in DIAGNOSTIC_METHODS:
                out.append(Violation("UnknownDiagnostic", r.id, f"no diagnostic named {diag!r}"))
            elif c.method not in DIAGNOSTIC_METHODS[diag]:
                out.append(
                    Violation("UnknownDiagnosticForMethod", r.id, f"diagnostic {diag!r} does not apply to {c.method.value}")
                )
        elif not r.binding.value.strip():
            out.append(Violation("EmptyPrompt", r.id, "attested requirement without prompt"))
    for rid in REQUIRED_ITEMS.get(c.method, ()):
        if rid not in seen:
            out.append(Violation("MissingRequirement", rid, f"{c.method.value} contracts must include {rid!r}"))
    for key, value in c.thresholds.items():
        if key not in DEFAULT_THRESHOLDS:
            out.append(Violation("UnknownThreshold", None, f"no threshold named {key!r}"))
        elif not (value == value) or value < 0:
            out.append(Violation("BadThreshold", None, f"{key} must be a non-negative number"))
    try:
        _parse_timestamp(c.authored_at)
    except ValueError:
        out.append(Violation("BadTimestamp", None, f"authored_at {c.authored_at!r} is not YYYY-MM-DDTHH:MM:SSZ"))
    return out


def splice(active: Iterable[Requirement], target: str) -> tuple[Requirement, ...]:
    """Union of ``active`` with the target's requirement set, de-duplicated by id."""
    active = tuple(active)
    have = {r.id for r in active}
    extra = tuple(r for r in builtin_contract(target).requirements if r.id not in have)
    return active + extra


def _parse_timestamp(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ")


# --- file format -------------------------------------------------------------

_CONTRACT_KEYS = {"method", "author", "authored_at"}
_REQUIREMENT_KEYS = {"description", "policy", "binding", "source"}


def serialize_contract(c: MethodDataContract) -> bytes:
    sections = [("contract", [("method", c.method.value), ("author", c.author), ("authored_at", c.authored_at)])]
    if c.thresholds:
        sections.append(("thresholds", [(k, kvfile.format_number(v)) for k, v in sorted(c.thresholds.items())]))
    for r in c.requirements:
        entries = [
            ("description", r.description),
            ("policy", r.policy.render()),
            ("binding", r.binding.render()),
        ]
        if r.source:
            entries.append(("source", r.source))
        sections.append((f"requirement.{r.id}", entries))
    return kvfile.render(sections)


def _parse_policy(text: str, where) -> Policy:
    if text == "stop":
        return Policy.stop()
    if text == "flag":
        return Policy.flag()
    if text.startswith("branch:") and text[len("branch:") :].strip():
        return Policy(PolicyKind.BRANCH, text[len("branch:") :].strip())
    raise ParseError(f"unknown policy {text!r}; expected stop, flag or branch:<target>", *where)


def _parse_binding(text: str, where) -> Binding:
    if text.startswith("auto:") and text[5:].strip():
        return Binding.auto(text[5:].strip())
    if text.startswith("attest:") and text[7:].strip():
        return Binding.attest(text[7:].strip())
    raise ParseError(f"unknown binding {text!r}; expected auto:<diagnostic> or attest:<prompt>", *where)


def parse_contract_file(data: bytes | str, strict: bool = True) -> MethodDataContract:
    doc = kvfile.parse(data)
    head = doc.get("contract")
    if head is None:
        raise ParseError("missing [contract] section", 1, 1)
    unknown: list[str] = []
    for key in head.entries:
        if key not in _CONTRACT_KEYS:
            unknown.append(f"UnknownKey: [contract] {key} (line {head.where(key)[0]})")
    for key in ("method", "author", "authored_at"):
        if key not in head.entries:
            raise ParseError(f"[contract] is missing {key!r}", head.line, 1)
    try:
        method = MethodKind(head.entries["method"])
    except ValueError:
        raise ParseError(f"unknown method {head.entries['method']!r}", *head.where("method")) from None

    thresholds: dict[str, float] = {}
    tsec = doc.get("thresholds")
    if tsec is not None:
        for key, value in tsec.entries.items():
            try:
                thresholds[key] = kvfile.parse_number(value)
            except ValueError:
                raise ParseError(f"threshold {key} is not a number", *tsec.where(key)) from None

    reqs: list[Requirement] = []
    for sec in doc.sections:
        if sec.name in ("contract", "thresholds"):
            continue
        if not sec.name.startswith("requirement."):
            unknown.append(f"UnknownSection: [{sec.name}] (line {sec.line})")
            continue
        rid = sec.name[len("requirement.") :]
        for key in sec.entries:
            if key not in _REQUIREMENT_KEYS:
                unknown.append(f"UnknownKey: [{sec.name}] {key} (line {sec.where(key)[0]})")
        for key in ("description", "policy", "binding"):
            if key not in sec.entries:
                raise ParseError(f"[{sec.name}] is missing {key!r}", sec.line, 1)
        reqs.append(
            Requirement(
                rid,
                sec.entries["description"],
                _parse_policy(sec.entries["policy"], sec.where("policy")),
                _parse_binding(sec.entries["binding"], sec.where("binding")),
                sec.entries.get("source", ""),
            )
        )
    if unknown and strict:
        raise SchemaError(unknown)
    contract = MethodDataContract(method, tuple(reqs), head.entries["authored_at"], head.entries["author"], thresholds)
    violations = validate_contract(contract)
    if violations:
        raise SchemaError(violations)
    return contract


def contract_digest(c: MethodDataContract) -> str:
    return kvfile.sha256_hex(serialize_contract(c))


def with_overrides(c: MethodDataContract, **thresholds: float) -> MethodDataContract:
    merged = dict(c.thresholds)
    merged.update(thresholds)
    return replace(c, thresholds=merged)
