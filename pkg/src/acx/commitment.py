"""Pre-commitment statements: authoring, digest locking, verification and evaluation.

Statement file (``precommit.acx``)::

    [commitment]
    audit_digest = <sha256 of the audit report file>
    downgrade =                      # or "descriptive"
    locked_at = 2026-03-01T09:00:00Z
    lock_digest = <sha256>

    [primary_spec]
    estimator = DiD2x2
    ...
    [spec.alt_control]               # further named specifications
    [criterion.1]
    label = pre-trend divergence
    expression = pretrend.p < 0.10
    [thresholds]
    alt_gap = 0.5
    [reporting]
    1 = free text obligation
    [coi]
    has_stake = false
    narrative = ...
    [review]                         # optional, added after locking
    reviewer = ...
    reviewed_at = ...
    lock_digest = <the lock digest being countersigned>
    signoff = <sha256 over the three fields above>

``lock_digest`` is the SHA-256 of the canonical JSON form of every field
except ``lock_digest`` and the review block.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Mapping

from . import kvfile
from .audit import AUDIT_METRICS, BLOCKED, AuditReport
from .criteria import MissingMetric, evaluate_expr, metrics_of, parse_criterion, to_text
from .errors import (
    AcxError,
    AlreadyLocked,
    AuditBlocked,
    AuditMissing,
    CommitmentError,
    CriterionInvalid,
    EstimationError,
    ParseError,
    SchemaError,
    UnknownMetric,
)
from .estimators import EstimateResult, SpecDescriptor
from .ledger import Ledger, LedgerEntry, lock_entry, utc_now

DOWNGRADE_DESCRIPTIVE = "descriptive"
STANDARD, ELEVATED = "standard", "elevated"
TRUSTWORTHY, DISTRUST = "Trustworthy-as-committed", "Distrust-triggered"
PRIMARY = "primary"
RESULT_FAMILIES = ("effect", "se", "p")
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class Criterion:
    label: str
    expression: str


@dataclass(frozen=True)
class Review:
    reviewer: str
    reviewed_at: str
    lock_digest: str
    signoff: str = ""

    def expected_signoff(self) -> str:
        return kvfile.digest({"lock_digest": self.lock_digest, "reviewed_at": self.reviewed_at, "reviewer": self.reviewer})


@dataclass(frozen=True)
class PreCommitment:
    primary_spec: SpecDescriptor
    criteria: tuple[Criterion, ...] = ()
    reporting: tuple[str, ...] = ()
    has_stake: bool = False
    coi_narrative: str = ""
    audit_digest: str = ""
    alternative_specs: Mapping[str, SpecDescriptor] = field(default_factory=dict)
    thresholds: Mapping[str, float] = field(default_factory=dict)
    downgrade: str = ""
    locked_at: str = ""
    lock_digest: str = ""
    review: Review | None = None

    def canonical_dict(self) -> dict:
        """Every field covered by the lock digest."""
        return {
            "audit_digest": self.audit_digest,
            "coi": {"has_stake": self.has_stake, "narrative": self.coi_narrative},
            "criteria": [{"expression": c.expression, "label": c.label} for c in self.criteria],
            "downgrade": self.downgrade,
            "locked_at": self.locked_at,
            "primary_spec": self.primary_spec.canonical_dict(),
            "reporting": list(self.reporting),
            "specs": {k: v.canonical_dict() for k, v in sorted(self.alternative_specs.items())},
            "thresholds": {k: float(v) for k, v in sorted(self.thresholds.items())},
        }

    def canonical_bytes(self) -> bytes:
        return kvfile.canonical_bytes(self.canonical_dict())

    def compute_lock_digest(self) -> str:
        return kvfile.sha256_hex(self.canonical_bytes())

    @property
    def is_locked(self) -> bool:
        return bool(self.lock_digest)

    def specs(self) -> dict[str, SpecDescriptor]:
        """Primary plus named alternatives, keyed by metric label."""
        return {PRIMARY: self.primary_spec, **dict(sorted(self.alternative_specs.items()))}


# --- metric namespace ------------------------------------------------------------------


def metric_namespace(pc: PreCommitment):
    """Predicate accepting every metric a criterion of ``pc`` may reference."""
    labels = set(pc.specs())

    def accepts(name: str) -> bool:
        if name in AUDIT_METRICS:
            return True
        head, _, rest = name.partition(".")
        if head == "threshold":
            return rest in pc.thresholds
        return head in RESULT_FAMILIES and rest in labels

    return accepts


def estimate_metrics(results: Mapping[str, EstimateResult]) -> dict[str, float]:
    """``effect.<label>``, ``se.<label>`` and ``p.<label>`` for each labelled result."""
    out = {}
    for label, r in results.items():
        out[f"effect.{label}"] = r.effect
        out[f"se.{label}"] = r.se
        out[f"p.{label}"] = r.p_value
    return out


def check_criteria(pc: PreCommitment) -> None:
    accepts = metric_namespace(pc)
    for c in pc.criteria:
        try:
            parse_criterion(c.expression, accepts)
        except UnknownMetric as err:
            raise CriterionInvalid(f"criterion {c.label!r}: unknown metric {err.name!r}") from None
        except ParseError as err:
            raise CriterionInvalid(f"criterion {c.label!r}: {err}") from None


# --- file format -----------------------------------------------------------------------


def serialize(pc: PreCommitment) -> bytes:
    sections = [
        (
            "commitment",
            [
                ("audit_digest", pc.audit_digest),
                ("downgrade", pc.downgrade),
                ("locked_at", pc.locked_at),
                ("lock_digest", pc.lock_digest),
            ],
        ),
        ("primary_spec", pc.primary_spec.kv_entries()),
    ]
    for name, spec in sorted(pc.alternative_specs.items()):
        sections.append((f"spec.{name}", spec.kv_entries()))
    for i, c in enumerate(pc.criteria, start=1):
        sections.append((f"criterion.{i}", [("label", c.label), ("expression", c.expression)]))
    if pc.thresholds:
        sections.append(("thresholds", [(k, kvfile.format_number(float(v))) for k, v in sorted(pc.thresholds.items())]))
    if pc.reporting:
        sections.append(("reporting", [(str(i), text) for i, text in enumerate(pc.reporting, start=1)]))
    sections.append(("coi", [("has_stake", "true" if pc.has_stake else "false"), ("narrative", pc.coi_narrative)]))
    if pc.review is not None:
        r = pc.review
        sections.append(
            ("review", [("reviewer", r.reviewer), ("reviewed_at", r.reviewed_at), ("lock_digest", r.lock_digest), ("signoff", r.signoff)])
        )
    return kvfile.render(sections)


_KNOWN = {
    "commitment": {"audit_digest", "downgrade", "locked_at", "lock_digest"},
    "coi": {"has_stake", "narrative"},
    "review": {"reviewer", "reviewed_at", "lock_digest", "signoff"},
}


def _ordinal_key(name: str, prefix: str, line: int) -> int:
    tail = name[len(prefix) :]
    if not tail.isdigit():
        raise ParseError(f"[{name}] must be numbered", line, 1)
    return int(tail)


def parse(data: bytes | str) -> PreCommitment:
    doc = kvfile.parse(data)
    problems = []
    for sec in doc.sections:
        base = sec.name.split(".", 1)[0]
        if base not in {"commitment", "primary_spec", "spec", "criterion", "thresholds", "reporting", "coi", "review"}:
            problems.append(f"UnknownSection: [{sec.name}]")
        elif base in _KNOWN:
            problems += [f"UnknownKey: [{sec.name}] {k}" for k in sec.entries if k not in _KNOWN[base]]
    if problems:
        raise SchemaError(problems)
    head = doc.get("commitment")
    primary = doc.get("primary_spec")
    if primary is None:
        raise ParseError("missing [primary_spec] section", 1, 1)
    try:
        primary_spec = SpecDescriptor.from_kv(primary.entries)
        alternatives = {s.name[len("spec.") :]: SpecDescriptor.from_kv(s.entries) for s in doc.with_prefix("spec.")}
    except (KeyError, ValueError, EstimationError) as err:
        raise ParseError(f"invalid specification: {err}", primary.line, 1) from None
    for name in alternatives:
        if not _NAME_RE.match(name) or name == PRIMARY:
            raise ParseError(f"invalid specification name {name!r}", None, None)
    crit_secs = sorted(doc.with_prefix("criterion."), key=lambda s: _ordinal_key(s.name, "criterion.", s.line))
    criteria = []
    for sec in crit_secs:
        if "expression" not in sec.entries:
            raise ParseError(f"[{sec.name}] has no expression", sec.line, 1)
        criteria.append(Criterion(sec.entries.get("label", sec.name), sec.entries["expression"]))
    th = doc.get("thresholds")
    thresholds = {}
    if th is not None:
        for k, v in th.entries.items():
            try:
                thresholds[k] = float(kvfile.parse_number(v))
            except ValueError:
                raise ParseError(f"threshold {k!r} is not a number", *th.where(k)) from None
    rep = doc.get("reporting")
    reporting = ()
    if rep is not None:
        keys = sorted(rep.entries, key=lambda k: int(k) if k.isdigit() else -1)
        if any(not k.isdigit() for k in keys):
            raise ParseError("[reporting] keys must be numbered", rep.line, 1)
        reporting = tuple(rep.entries[k] for k in keys)
    coi = doc.get("coi")
    has_stake = kvfile.parse_bool(coi.entries.get("has_stake", "false"), coi.where("has_stake")) if coi else False
    rv = doc.get("review")
    review = None
    if rv is not None:
        e = rv.entries
        review = Review(e.get("reviewer", ""), e.get("reviewed_at", ""), e.get("lock_digest", ""), e.get("signoff", ""))
    h = head.entries if head else {}
    downgrade = h.get("downgrade", "")
    if downgrade not in ("", DOWNGRADE_DESCRIPTIVE):
        raise ParseError(f"downgrade must be empty or {DOWNGRADE_DESCRIPTIVE!r}", *head.where("downgrade"))
    return PreCommitment(
        primary_spec=primary_spec,
        criteria=tuple(criteria),
        reporting=reporting,
        has_stake=has_stake,
        coi_narrative=coi.entries.get("narrative", "") if coi else "",
        audit_digest=h.get("audit_digest", ""),
        alternative_specs=alternatives,
        thresholds=thresholds,
        downgrade=downgrade,
        locked_at=h.get("locked_at", ""),
        lock_digest=h.get("lock_digest", ""),
        review=review,
    )


# --- locking and verification ----------------------------------------------------------


def lock(pc: PreCommitment, ledger: Ledger, audit: AuditReport | None, locked_at: str | None = None) -> PreCommitment:
    """Validate, digest and record the statement as the ledger's Lock entry.

    Returns the locked statement; write it out with :func:`serialize`.
    """
    if audit is None:
        raise AuditMissing("no audit report supplied; run the audit before locking")
    if pc.audit_digest and pc.audit_digest != audit.digest():
        raise AuditMissing("statement references an audit report other than the one supplied")
    if audit.gate == BLOCKED and pc.downgrade != DOWNGRADE_DESCRIPTIVE:
        raise AuditBlocked("audit gate is Blocked; lock only with 'downgrade = descriptive'")
    check_criteria(pc)
    if pc.is_locked or lock_entry(ledger.entries()) is not None:
        raise AlreadyLocked("this analysis already has a locked commitment")
    locked = replace(pc, audit_digest=audit.digest(), locked_at=locked_at or pc.locked_at or utc_now(), review=None)
    locked = replace(locked, lock_digest=locked.compute_lock_digest())
    ledger.append(
        "Lock",
        {
            "lock_digest": locked.lock_digest,
            "audit_digest": locked.audit_digest,
            "audit_gate": audit.gate,
            "downgrade": locked.downgrade,
            "has_stake": locked.has_stake,
            "primary_spec": locked.primary_spec.canonical_dict(),
            "primary_fingerprint": locked.primary_spec.fingerprint(),
        },
        "confirmatory",
        timestamp=locked.locked_at,
    )
    return locked


def sign_review(pc: PreCommitment, reviewer: str, reviewed_at: str | None = None) -> PreCommitment:
    """Attach an independent reviewer's countersignature to a locked statement."""
    if not pc.is_locked:
        raise CommitmentError("only a locked statement can be reviewed")
    r = Review(reviewer, reviewed_at or utc_now(), pc.lock_digest)
    return replace(pc, review=replace(r, signoff=r.expected_signoff()))


@dataclass(frozen=True)
class CommitmentCheck:
    ok: bool
    problems: tuple[str, ...] = ()
    statement: PreCommitment | None = None


def verify(data: bytes, lock: LedgerEntry | None = None) -> CommitmentCheck:
    """Check a stored statement against its own digest and, if given, the ledger's Lock entry.

    The file must also be byte-identical to the canonical rendering of its
    content, so formatting-only edits are caught as well.
    """
    try:
        pc = parse(data)
    except (AcxError, UnicodeDecodeError, ValueError) as err:
        return CommitmentCheck(False, (f"unreadable statement: {err}",))
    problems = []
    if serialize(pc) != data:
        problems.append("file is not in canonical form")
    if not pc.is_locked:
        problems.append("statement is not locked")
    elif pc.compute_lock_digest() != pc.lock_digest:
        problems.append("lock digest does not match content")
    if pc.review is not None and not review_valid(pc):
        problems.append("review signoff does not match")
    if lock is not None:
        if lock.payload.get("lock_digest") != pc.lock_digest:
            problems.append("ledger Lock entry records a different lock digest")
        if lock.payload.get("primary_fingerprint") != pc.primary_spec.fingerprint():
            problems.append("ledger Lock entry records a different primary specification")
    return CommitmentCheck(not problems, tuple(problems), pc)


def review_valid(pc: PreCommitment) -> bool:
    r = pc.review
    return (
        r is not None
        and bool(r.reviewer)
        and pc.is_locked
        and r.lock_digest == pc.lock_digest
        and r.signoff == r.expected_signoff()
    )


def coi_scrutiny_level(pc: PreCommitment) -> str:
    return ELEVATED if pc.has_stake else STANDARD


# --- evaluation ------------------------------------------------------------------------


@dataclass(frozen=True)
class CriterionOutcome:
    label: str
    expression: str
    triggered: bool
    inputs: Mapping[str, float]
    missing: tuple[str, ...] = ()

    @property
    def evaluable(self) -> bool:
        return not self.missing


@dataclass(frozen=True)
class Verdict:
    per_criterion: tuple[CriterionOutcome, ...]
    overall: str


def evaluate(pc: PreCommitment, metrics: Mapping[str, float]) -> Verdict:
    """Evaluate every criterion; any missing input makes that criterion triggered."""
    values = dict(metrics)
    values.update({f"threshold.{k}": float(v) for k, v in pc.thresholds.items()})
    outcomes = []
    for c in pc.criteria:
        expr = parse_criterion(c.expression)
        names = metrics_of(expr)
        missing = tuple(n for n in names if n not in values)
        inputs = {n: float(values[n]) for n in names if n in values}
        if missing:
            triggered = True
        else:
            try:
                triggered = evaluate_expr(expr, values)
            except MissingMetric:  # pragma: no cover - guarded above
                triggered = True
        outcomes.append(CriterionOutcome(c.label, to_text(expr), bool(triggered), inputs, missing))
    overall = DISTRUST if any(o.triggered for o in outcomes) else TRUSTWORTHY
    return Verdict(tuple(outcomes), overall)
