"""Causal/descriptive labelling, failure-mode tagging and the final disclosure report.

``build_report`` writes ``report.md`` (for reviewers), ``report.acxr`` (the
machine-readable twin) and ``plots/*.svg``. Output bytes depend only on the
inputs: nothing reads the clock or the environment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from . import kvfile
from .audit import OPEN, AuditFinding, AuditReport, Status, audit_metrics
from .commitment import (
    DOWNGRADE_DESCRIPTIVE,
    ELEVATED,
    PRIMARY,
    CommitmentCheck,
    PreCommitment,
    Verdict,
    coi_scrutiny_level,
    evaluate,
    review_valid,
)
from .contract import MethodDataContract, contract_digest
from .errors import ChainMismatch, MissingPlot
from .estimators import Z95
from .ledger import CONFIRMATORY, LedgerEntry, MultiplicityReport, lock_entry, multiplicity, order_problems, scan

CAUSAL, DESCRIPTIVE = "causal", "descriptive"

# Reason codes, one per conjunct of the causal label.
AUDIT_BLOCKED = "audit-blocked"
NOT_LOCKED = "not-locked"
LOCK_ORDER = "lock-order"
SPEC_MISMATCH = "spec-mismatch"
COI_UNREVIEWED = "coi-unreviewed"
DESCRIPTIVE_DOWNGRADE = "descriptive-downgrade"
NO_ESTIMATE = "no-estimate"
CONJUNCTS = (AUDIT_BLOCKED, NOT_LOCKED, LOCK_ORDER, SPEC_MISMATCH, COI_UNREVIEWED)

METHOD_DATA_MISMATCH = "method-data-mismatch"
INVISIBLE_FORKING = "invisible-forking"
CONFIDENCE_LAUNDERING_GUARD = "confidence-laundering-guard"

CONDITIONS = ("Method-data contract", "Data audit", "Pre-commitment")
FAILURE_MODE_TABLE = (
    (METHOD_DATA_MISMATCH, ("Direct", "Direct", "Indirect")),
    (INVISIBLE_FORKING, ("Indirect", "Indirect", "Direct")),
    ("confidence-laundering", ("Indirect", "Indirect", "Direct")),
)


@dataclass(frozen=True)
class Label:
    label: str
    reasons: tuple[str, ...]


def gate_label(
    audit: AuditReport,
    commitment: PreCommitment | None,
    check: CommitmentCheck | None,
    entries: list[LedgerEntry],
    reported: LedgerEntry | None,
) -> Label:
    """Causal only if every conjunct holds; otherwise descriptive with every failed conjunct."""
    reasons = []
    if audit.gate != OPEN:
        reasons.append(AUDIT_BLOCKED)
    lock = lock_entry(entries)
    locked = (
        commitment is not None
        and commitment.is_locked
        and check is not None
        and check.ok
        and lock is not None
        and lock.payload.get("lock_digest") == commitment.lock_digest
        and commitment.audit_digest == audit.digest()
    )
    if not locked:
        reasons.append(NOT_LOCKED)
    if order_problems(entries):
        reasons.append(LOCK_ORDER)
    if reported is None:
        reasons.append(NO_ESTIMATE)
    elif commitment is None or reported.payload.get("fingerprint") != commitment.primary_spec.fingerprint():
        reasons.append(SPEC_MISMATCH)
    if commitment is not None and coi_scrutiny_level(commitment) == ELEVATED and not review_valid(commitment):
        reasons.append(COI_UNREVIEWED)
    if commitment is not None and commitment.downgrade == DOWNGRADE_DESCRIPTIVE and AUDIT_BLOCKED not in reasons:
        # A downgrade outlives any later re-audit: the commitment itself forbids the label.
        reasons.append(DESCRIPTIVE_DOWNGRADE)
    return Label(DESCRIPTIVE if reasons else CAUSAL, tuple(reasons))


def tag_failure_modes(findings, label: Label, mult: MultiplicityReport) -> dict[str, tuple[str, ...]]:
    """Failure-mode tags keyed by report section (``finding.<id>``, ``multiplicity``, ``label``)."""
    tags: dict[str, tuple[str, ...]] = {}
    for f in findings:
        if f.status in (Status.STOP, Status.FLAG):
            tags[f"finding.{f.requirement_id}"] = (METHOD_DATA_MISMATCH,)
    if mult.selection_flag:
        tags["multiplicity"] = (INVISIBLE_FORKING,)
    if label.label == DESCRIPTIVE:
        tags["label"] = (CONFIDENCE_LAUNDERING_GUARD,)
    return tags


def default_reported(entries: list[LedgerEntry]) -> LedgerEntry | None:
    """Most recent confirmatory estimate, else the most recent estimate."""
    estimates = [e for e in entries if e.kind == "Estimate"]
    confirmatory = [e for e in estimates if e.taint == CONFIRMATORY]
    if confirmatory:
        return confirmatory[-1]
    return estimates[-1] if estimates else None


def ledger_metrics(entries: list[LedgerEntry], reported: LedgerEntry | None) -> dict[str, float]:
    """``effect.<label>`` etc. from labelled ledger estimates; the reported one is ``primary``."""
    out: dict[str, float] = {}

    def put(label: str, payload: Mapping) -> None:
        for family, key in (("effect", "effect"), ("se", "se"), ("p", "p_value")):
            if key in payload:
                out[f"{family}.{label}"] = float(payload[key])

    for e in entries:
        if e.kind == "Estimate" and e.payload.get("label"):
            put(e.payload["label"], e.payload)
    if reported is not None:
        put(PRIMARY, reported.payload)
    return out


@dataclass(frozen=True)
class FinalReport:
    label: Label
    audit: AuditReport
    commitment: PreCommitment | None
    commitment_check: CommitmentCheck | None
    verdict: Verdict | None
    multiplicity: MultiplicityReport
    tags: Mapping[str, tuple[str, ...]]
    reported: LedgerEntry | None
    contract_digest: str
    ledger_tip: str
    plots: Mapping[str, str] = field(default_factory=dict)
    markdown: str = ""
    twin: bytes = b""


def _num(x) -> str:
    if x is None:
        return "n/a"
    x = float(x)
    if not math.isfinite(x):
        return "n/a"
    return f"{x:.4g}"


def _evidence_text(f: AuditFinding) -> str:
    return ", ".join(f"{k}={_num(v)}" for k, v in sorted(f.evidence.items()))


def _cell(text: str) -> str:
    return text.replace("|", "\\|")


def _markdown(r: FinalReport, contract: MethodDataContract) -> str:
    out = ["# Analysis report", ""]
    out.append(f"**Label: {r.label.label}**")
    if r.label.reasons:
        out.append("")
        out.append("Refused the causal label for: " + ", ".join(f"`{x}`" for x in r.label.reasons) + ".")
    if "label" in r.tags:
        out.append("")
        out.append(f"Tag: `{CONFIDENCE_LAUNDERING_GUARD}`. Formatted output does not upgrade a descriptive result.")
    out += ["", "## Method-data contract", ""]
    out.append(f"- method: {contract.method.value}")
    out.append(f"- requirements: {len(contract.requirements)}")
    out.append(f"- digest: `{r.contract_digest}`")

    out += ["", "## Data audit", ""]
    out.append(f"Gate: **{r.audit.gate}** (audit digest `{r.audit.digest()}`)")
    out += ["", "| requirement | status | policy | reason | evidence | tags |", "|---|---|---|---|---|---|"]
    for f in r.audit.findings:
        tags = ", ".join(r.tags.get(f"finding.{f.requirement_id}", ()))
        out.append(
            f"| {f.requirement_id} | {f.status.value} | {f.policy} | {f.reason} | {_cell(_evidence_text(f))} | {tags} |"
        )
    narratives = [(f.requirement_id, f.narrative) for f in r.audit.findings if f.narrative and f.status is not Status.PASS]
    if narratives:
        out.append("")
        out += [f"- **{rid}**: {_cell(text)}" for rid, text in narratives]
    if r.plots:
        out += ["", "### Plots", ""]
        out += [f"![{name}](plots/{name})" for name in sorted(r.plots)]

    out += ["", "## Pre-commitment", ""]
    pc = r.commitment
    if pc is None:
        out.append("No pre-commitment statement supplied.")
    else:
        status = "verified" if r.commitment_check and r.commitment_check.ok else "NOT verified"
        out.append(f"- statement: {status}")
        if r.commitment_check and r.commitment_check.problems:
            out += [f"  - {p}" for p in r.commitment_check.problems]
        out.append(f"- lock digest: `{pc.lock_digest or 'unlocked'}`")
        out.append(f"- locked at: {pc.locked_at or 'n/a'}")
        out.append(f"- primary specification: `{pc.primary_spec.canonical_text()}`")
        for name, spec in sorted(pc.alternative_specs.items()):
            out.append(f"- specification `{name}`: `{spec.canonical_text()}`")
        out.append(f"- conflict-of-interest scrutiny: {coi_scrutiny_level(pc)}")
        if pc.coi_narrative:
            out.append(f"- disclosure: {pc.coi_narrative}")
        if pc.review is not None:
            state = "valid" if review_valid(pc) else "INVALID"
            out.append(f"- independent review: {pc.review.reviewer} at {pc.review.reviewed_at} ({state})")
        if pc.downgrade:
            out.append(f"- downgrade: {pc.downgrade}")
        if pc.reporting:
            out += ["", "### Reporting commitments", ""]
            out += [f"{i}. {text}" for i, text in enumerate(pc.reporting, start=1)]

    if r.verdict is not None:
        out += ["", "## Falsification criteria", ""]
        out.append(f"Overall: **{r.verdict.overall}**")
        out += ["", "| criterion | expression | triggered | inputs |", "|---|---|---|---|"]
        for c in r.verdict.per_criterion:
            inputs = ", ".join(f"{k}={_num(v)}" for k, v in c.inputs.items())
            if c.missing:
                inputs = (inputs + "; " if inputs else "") + "missing " + ", ".join(c.missing)
            out.append(f"| {_cell(c.label)} | `{_cell(c.expression)}` | {'yes' if c.triggered else 'no'} | {_cell(inputs)} |")

    out += ["", "## Reported estimate", ""]
    if r.reported is None:
        out.append("No estimate recorded.")
    else:
        p = r.reported.payload
        lo, hi = p.get("ci95", [None, None])
        out.append(f"- ledger entry: {r.reported.index} ({r.reported.taint})")
        out.append(f"- specification: `{kvfile.canonical_bytes(p.get('spec', {})).decode().rstrip()}`")
        out.append(f"- effect: {_num(p.get('effect'))} (se {_num(p.get('se'))}, 95% CI [{_num(lo)}, {_num(hi)}])")
        out.append(f"- p-value: {_num(p.get('p_value'))}")
        out.append(f"- units: {p.get('n_units', 'n/a')}, observations: {p.get('n_obs', 'n/a')}")

    m = r.multiplicity
    out += ["", "## Specifications attempted", ""]
    if m.distinct_specs > 1:
        out.append(
            f"{m.distinct_specs} distinct specifications over {m.total_specs} runs "
            f"({m.confirmatory} confirmatory, {m.exploratory} exploratory)."
        )
        out.append(f"Selection flag: **{'raised' if m.selection_flag else 'not raised'}**")
        if m.selection_flag:
            out.append(f"Tag: `{INVISIBLE_FORKING}`. The reported p-value does not reflect the search below.")
    else:
        noun = "specification" if m.distinct_specs == 1 else "specifications"
        runs = "run" if m.total_specs == 1 else "runs"
        out.append(f"{m.distinct_specs} {noun} attempted ({m.total_specs} {runs}).")
    if m.chronology:
        out += ["", "| entry | taint | label | fingerprint | effect | p-value |", "|---|---|---|---|---|---|"]
        for c in m.chronology:
            out.append(f"| {c.index} | {c.taint} | {_cell(c.label)} | `{c.fingerprint[:12]}` | {_num(c.effect)} | {_num(c.p_value)} |")

    out += ["", "## Failure modes and conditions", ""]
    out.append("| failure mode | " + " | ".join(CONDITIONS) + " |")
    out.append("|---|---|---|---|")
    for mode, cells in FAILURE_MODE_TABLE:
        out.append(f"| {mode} | " + " | ".join(cells) + " |")

    out += ["", "---", ""]
    out.append(
        f"Confidence intervals are effect +/- {Z95} se; p-values are two-sided normal. "
        f"Ledger tip `{r.ledger_tip}`."
    )
    return "\n".join(out) + "\n"


def _twin(r: FinalReport) -> bytes:
    head = [
        ("label", r.label.label),
        ("reasons", kvfile.format_list(r.label.reasons)),
        ("contract_digest", r.contract_digest),
        ("audit_digest", r.audit.digest()),
        ("audit_gate", r.audit.gate),
        ("lock_digest", r.commitment.lock_digest if r.commitment else ""),
        ("commitment_verified", "true" if r.commitment_check and r.commitment_check.ok else "false"),
        ("scrutiny", coi_scrutiny_level(r.commitment) if r.commitment else ""),
        ("verdict", r.verdict.overall if r.verdict else ""),
        ("reported_entry", str(r.reported.index) if r.reported else ""),
        ("ledger_tip", r.ledger_tip),
    ]
    m = r.multiplicity
    sections = [
        ("report", head),
        (
            "multiplicity",
            [
                ("total_specs", str(m.total_specs)),
                ("distinct_specs", str(m.distinct_specs)),
                ("confirmatory", str(m.confirmatory)),
                ("exploratory", str(m.exploratory)),
                ("selection_flag", "true" if m.selection_flag else "false"),
            ],
        ),
    ]
    for c in m.chronology:
        sections.append(
            (
                f"chronology.{c.index}",
                [
                    ("fingerprint", c.fingerprint),
                    ("taint", c.taint),
                    ("label", c.label),
                    ("effect", kvfile.format_number(c.effect) if math.isfinite(c.effect) else "nan"),
                    ("p_value", kvfile.format_number(c.p_value) if math.isfinite(c.p_value) else "nan"),
                ],
            )
        )
    if r.verdict is not None:
        for i, c in enumerate(r.verdict.per_criterion, start=1):
            sections.append(
                (f"criterion.{i}", [("label", c.label), ("expression", c.expression), ("triggered", "true" if c.triggered else "false")])
            )
    if r.tags:
        sections.append(("tags", [(k, kvfile.format_list(v)) for k, v in sorted(r.tags.items())]))
    if r.plots:
        sections.append(("plots", [(name, kvfile.sha256_hex(r.plots[name].encode("utf-8"))) for name in sorted(r.plots)]))
    return kvfile.render(sections)


def assemble(
    contract: MethodDataContract,
    audit: AuditReport,
    plots: Mapping[str, str],
    commitment: PreCommitment | None,
    check: CommitmentCheck | None,
    ledger_bytes: bytes,
    reported_index: int | None = None,
) -> FinalReport:
    """Verify inputs and compute every report field without touching the filesystem."""
    entries, res = scan(ledger_bytes)
    if not res.ok:
        raise ChainMismatch(f"ledger broken at entry {res.first_broken}: {res.detail}")
    checked_plots = {}
    for name, sha in sorted(audit.plot_digests.items()):
        text = plots.get(name)
        if text is None or kvfile.sha256_hex(text.encode("utf-8")) != sha:
            raise MissingPlot(name)
        checked_plots[name] = text
    if reported_index is None:
        reported = default_reported(entries)
    else:
        matches = [e for e in entries if e.index == reported_index and e.kind == "Estimate"]
        if not matches:
            raise KeyError(f"ledger entry {reported_index} is not an estimate")
        reported = matches[0]
    label = gate_label(audit, commitment, check, entries, reported)
    mult = multiplicity(entries, reported.payload.get("fingerprint") if reported else None)
    verdict = None
    if commitment is not None:
        verdict = evaluate(commitment, {**audit_metrics(audit), **ledger_metrics(entries, reported)})
    tags = tag_failure_modes(audit.findings, label, mult)
    tip = entries[-1].digest if entries else ""
    r = FinalReport(
        label, audit, commitment, check, verdict, mult, tags, reported, contract_digest(contract), tip, checked_plots
    )
    md = _markdown(r, contract)
    return replace(r, markdown=md, twin=_twin(r))


def build_report(
    out_dir: str | Path,
    contract: MethodDataContract,
    audit: AuditReport,
    plots: Mapping[str, str],
    commitment: PreCommitment | None,
    check: CommitmentCheck | None,
    ledger_bytes: bytes,
    reported_index: int | None = None,
) -> FinalReport:
    r = assemble(contract, audit, plots, commitment, check, ledger_bytes, reported_index)
    out = Path(out_dir)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    for name, text in r.plots.items():
        (out / "plots" / name).write_bytes(text.encode("utf-8"))
    (out / "report.md").write_bytes(r.markdown.encode("utf-8"))
    (out / "report.acxr").write_bytes(r.twin)
    return r

