"""Data audit: run each contract requirement's diagnostic or attestation and classify it.

A diagnostic returns a raw severity. The requirement's policy then caps it:
a Flag policy can at most flag, a Branch policy turns any failure into a
Branch. The gate is Blocked when a finding is Stop or when a Stop-policy
requirement could not be verified.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import kvfile, svg
from .contract import (
    MethodDataContract,
    PolicyKind,
    Requirement,
    contract_digest,
    splice,
)
from .errors import (
    MissingAttestation,
    NoVariation,
    ParseError,
    SchemaError,
    Separation,
    TooFewPeriods,
    ZeroVariance,
)
from .estimators import SpecDescriptor, twfe_event_study
from .numerics import cluster_robust_cov, least_squares, logistic_fit, wald_test
from .panel import Panel


class Status(str, enum.Enum):
    PASS = "Pass"
    FLAG = "Flag"
    STOP = "Stop"
    BRANCH = "Branch"
    UNVERIFIABLE = "Unverifiable"


OPEN, BLOCKED = "Open", "Blocked"

AGGREGATION_CAVEAT = (
    "The data were aggregated before delivery; differences in aggregation rules between groups "
    "can bias trend comparisons and cannot be detected from the aggregated rows."
)
BALANCE_CAVEAT = "Nominal balance on recorded fields does not show that the fields measure the same construct in both groups."


@dataclass(frozen=True)
class DiagnosticResult:
    status: Status
    evidence: Mapping[str, float] = field(default_factory=dict)
    narrative: str = ""
    reason: str = ""  # required for Unverifiable
    plots: Mapping[str, str] = field(default_factory=dict)  # file name -> svg text


@dataclass(frozen=True)
class AuditFinding:
    requirement_id: str
    status: Status
    policy: str
    diagnostic: str  # "" for attested requirements
    evidence: Mapping[str, float] = field(default_factory=dict)
    plot_refs: tuple[str, ...] = ()
    narrative: str = ""
    reason: str = ""


@dataclass(frozen=True)
class AuditReport:
    method: str
    findings: tuple[AuditFinding, ...]
    gate: str
    contract_digest: str
    panel_digest: str
    attestations_digest: str
    plot_digests: Mapping[str, str] = field(default_factory=dict)
    plots: Mapping[str, str] = field(default_factory=dict, compare=False)

    def finding(self, rid: str) -> AuditFinding:
        for f in self.findings:
            if f.requirement_id == rid:
                return f
        raise KeyError(rid)

    def serialize(self) -> bytes:
        return serialize_report(self)

    def digest(self) -> str:
        return kvfile.sha256_hex(self.serialize())


def compute_gate(findings) -> str:
    for f in findings:
        if f.status is Status.STOP:
            return BLOCKED
        if f.status is Status.UNVERIFIABLE and f.policy == PolicyKind.STOP.value:
            return BLOCKED
    return OPEN


# --- helpers -----------------------------------------------------------------


def _earliest_adoption(panel: Panel) -> int | None:
    times = [a for a in panel.adoption if a is not None]
    return min(times) if times else None


def _finite(evidence: Mapping[str, float]) -> dict[str, float]:
    return {k: float(v) for k, v in evidence.items() if v is not None and math.isfinite(float(v))}


def group_means(panel: Panel) -> dict[str, tuple[list[int], list[float]]]:
    """Per-period outcome means for treated (ever-adopting) and control units."""
    out = {}
    for name, mask in (("treated", panel.treated_row), ("control", ~panel.treated_row)):
        if not mask.any():
            continue
        t = panel.time[mask]
        y = panel.outcome[mask]
        periods = sorted(set(t.tolist()))
        out[name] = (periods, [float(y[t == p].mean()) for p in periods])
    return out


# --- diagnostics ---------------------------------------------------------------


def diag_pre_periods(panel: Panel, contract: MethodDataContract) -> DiagnosticResult:
    g0 = _earliest_adoption(panel)
    if g0 is None:
        return DiagnosticResult(Status.UNVERIFIABLE, reason="no-adoption", narrative="No unit adopts treatment.")
    ev = {}
    counts = []
    for name, mask in (("treated", panel.treated_row), ("control", ~panel.treated_row)):
        c = len({int(t) for t in panel.time[mask] if t < g0})
        if mask.any():
            ev[f"count.{name}"] = c
            counts.append(c)
    count = min(counts)
    ev["count"] = count
    stop_below = contract.threshold("pre_periods_stop_below")
    testable = contract.threshold("pre_periods_testable")
    if count < stop_below:
        return DiagnosticResult(Status.STOP, ev, f"{count} pre-period(s) before adoption at {g0}; fewer than {stop_below:g}.")
    if count < testable:
        return DiagnosticResult(
            Status.FLAG, ev, f"{count} pre-periods: trends can be plotted but a slope comparison needs {testable:g}."
        )
    return DiagnosticResult(Status.PASS, ev, f"{count} pre-periods before adoption at {g0}.")


def pretrend_slope_test(panel: Panel) -> tuple[float, float]:
    """Slope difference between treated and control on pre-adoption rows.

    Fits ``y ~ 1 + T + t + T:t`` on rows before the earliest adoption with
    unit-clustered (CR1) covariance; returns the ``T:t`` coefficient and its
    Wald p-value against F(1, G-1).
    """
    g0 = _earliest_adoption(panel)
    pre = panel.time < g0
    t = panel.time[pre].astype(float)
    d = panel.treated_row[pre].astype(float)
    x = np.column_stack([np.ones(t.size), d, t, d * t])
    fit = least_squares(x, panel.outcome[pre])
    clusters = panel.unit[pre]
    fit = fit.with_covariance(cluster_robust_cov(fit, x, clusters))
    g = np.unique(clusters).size
    return float(fit.coefficients[3]), wald_test(fit, [3], df_denominator=g - 1).p_value


def diag_parallel_trends(panel: Panel, contract: MethodDataContract) -> DiagnosticResult:
    g0 = _earliest_adoption(panel)
    if g0 is None or panel.treated_row.all():
        return DiagnosticResult(Status.UNVERIFIABLE, reason="no-comparison-group", narrative="Both groups are needed.")
    means = group_means(panel)
    plot = svg.line_chart(
        means, "Outcome by group over time", marker_x=g0 - 0.5, marker_label=f"adoption {g0}"
    )
    plots = {"parallel_trends.svg": plot}
    n_pre = len({int(t) for t in panel.time if t < g0})
    ev: dict[str, float] = {"pre_periods": n_pre}
    if n_pre < contract.threshold("pre_periods_testable"):
        return DiagnosticResult(
            Status.UNVERIFIABLE,
            ev,
            f"Only {n_pre} pre-periods: the trend plot is available but no slope test is possible.",
            reason="too-few-pre-periods",
            plots=plots,
        )
    slope, p = pretrend_slope_test(panel)
    ev.update(slope_difference=slope, p_value=p)
    if n_pre >= 4:
        try:
            es = twfe_event_study(panel, SpecDescriptor("TWFE_EventStudy"))
            ev["leads_p"] = es.extra.get("leads_p", float("nan"))
        except (TooFewPeriods, ValueError):
            pass
    alpha = contract.threshold("pretrend_alpha")
    if p < alpha:
        return DiagnosticResult(Status.FLAG, ev, f"Pre-period slopes differ by {slope:.4g} per period (p = {p:.3g}).", plots=plots)
    return DiagnosticResult(Status.PASS, ev, f"No detectable pre-period slope difference (p = {p:.3g}).", plots=plots)


def diag_group_sources(panel: Panel, contract: MethodDataContract) -> DiagnosticResult:
    mix = panel.provenance.source_mix
    if "treated" not in mix or "control" not in mix:
        return DiagnosticResult(
            Status.UNVERIFIABLE, reason="sources-undeclared", narrative="Provenance does not declare sources per group."
        )
    t, c = set(mix["treated"]), set(mix["control"])
    ev = {"sources.treated": len(t), "sources.control": len(c), "sources.shared": len(t & c)}
    if t != c:
        return DiagnosticResult(
            Status.STOP,
            ev,
            f"Treated units come from {sorted(t)} but controls from {sorted(c)}; group differences may reflect the source.",
        )
    return DiagnosticResult(Status.PASS, ev, f"Both groups drawn from {sorted(t)}.")


def diag_unit_grain(panel: Panel, contract: MethodDataContract) -> DiagnosticResult:
    prov = panel.provenance
    ev: dict[str, float] = {"transformations": len(prov.transformations), "rows": panel.n_obs}
    if prov.pre_aggregation_rows is not None:
        ev["pre_aggregation_rows"] = prov.pre_aggregation_rows
    if prov.transformations:
        return DiagnosticResult(
            Status.FLAG, ev, f"Grain {prov.aggregation_grain} after {len(prov.transformations)} transformation(s). {AGGREGATION_CAVEAT}"
        )
    return DiagnosticResult(Status.PASS, ev, f"Grain {prov.aggregation_grain}; no transformations declared.")


def diag_provenance(panel: Panel, contract: MethodDataContract) -> DiagnosticResult:
    prov = panel.provenance
    ev = {"documentation_present": 1.0 if prov.documentation_present else 0.0}
    if not prov.documentation_present or not prov.producer.strip():
        return DiagnosticResult(Status.FLAG, ev, "Producer or documentation is missing.")
    return DiagnosticResult(Status.PASS, ev, f"Produced by {prov.producer}; documentation present.")


def _key_part(text: str) -> str:
    """Make a categorical level usable inside a report key."""
    return re.sub(r"[^A-Za-z0-9_\-]", "_", str(text))


def _covariate_columns(panel: Panel, rows: np.ndarray, drop_first: bool = False) -> dict[str, np.ndarray]:
    cols = {}
    for name, v in panel.covariates.items():
        if name in panel.categorical:
            levels = panel.categorical[name][1:] if drop_first else panel.categorical[name]
            for level in levels:
                cols[f"{name}.{_key_part(level)}"] = (v[rows] == level).astype(float)
        else:
            cols[name] = np.asarray(v[rows], dtype=float)
    return cols


def standardized_mean_difference(treated: np.ndarray, control: np.ndarray, name: str = "") -> float:
    """``(mean_T - mean_C) / sqrt((s2_T + s2_C) / 2)`` with sample variances (ddof=1)."""
    pooled = (np.var(treated, ddof=1) + np.var(control, ddof=1)) / 2.0
    if not pooled > 0:
        raise ZeroVariance(name)
    return float((treated.mean() - control.mean()) / math.sqrt(pooled))


def diag_balance(panel: Panel, contract: MethodDataContract) -> DiagnosticResult:
    if not panel.covariates:
        return DiagnosticResult(Status.UNVERIFIABLE, reason="no-covariates", narrative="No covariates declared.")
    g0 = _earliest_adoption(panel)
    base = panel.time < g0 if g0 is not None else np.ones(panel.n_obs, dtype=bool)
    if not base.any():
        return DiagnosticResult(Status.UNVERIFIABLE, reason="no-baseline", narrative="No rows before adoption.")
    d = panel.treated_row[base]
    ev: dict[str, float] = {}
    for name, col in _covariate_columns(panel, base).items():
        ev[f"smd.{name}"] = standardized_mean_difference(col[d], col[~d], name)
    worst = max(abs(v) for v in ev.values())
    ev["max_abs_smd"] = worst
    cut = contract.threshold("smd_flag")
    if worst > cut:
        return DiagnosticResult(Status.FLAG, ev, f"Largest |SMD| {worst:.3f} exceeds {cut:g}. {BALANCE_CAVEAT}")
    return DiagnosticResult(Status.PASS, ev, f"All |SMD| <= {cut:g}. {BALANCE_CAVEAT}")


def control_break_test(panel: Panel) -> tuple[float, float]:
    """Level shift in the control-group mean series at the earliest adoption.

    OLS of the per-period control mean on ``[1, t, 1[t >= t0]]``; returns the
    shift and its p-value against F(1, T-3).
    """
    g0 = _earliest_adoption(panel)
    periods, means = group_means(panel)["control"]
    t = np.asarray(periods, dtype=float)
    x = np.column_stack([np.ones(t.size), t, (t >= g0).astype(float)])
    fit = least_squares(x, np.asarray(means))
    return float(fit.coefficients[2]), wald_test(fit, [2], df_denominator=t.size - 3).p_value


def _distinct_share(values: np.ndarray) -> float:
    return np.unique(values).size / values.size if values.size else float("nan")


def diag_outcome_integrity(panel: Panel, contract: MethodDataContract) -> DiagnosticResult:
    g0 = _earliest_adoption(panel)
    y = panel.outcome
    ev: dict[str, float] = {}
    notes: list[str] = []
    worst = Status.PASS
    plots = {}

    # coding break in the untreated series
    if g0 is not None and (~panel.treated_row).any():
        periods = group_means(panel)["control"][0]
        before = sum(1 for t in periods if t < g0)
        after = len(periods) - before
        if before >= 2 and after >= 1 and len(periods) >= 4:
            shift, p = control_break_test(panel)
            ev.update(break_shift=shift, break_p=p)
            if p < contract.threshold("break_alpha"):
                worst = Status.STOP
                notes.append(f"Control-group mean shifts by {shift:.4g} at period {g0} (p = {p:.3g}); the measure itself changed.")
        else:
            notes.append("Too few control periods for a break test.")
    else:
        notes.append("No control group; break test skipped.")

    # mass at the observed extremes
    lo, hi = float(y.min()), float(y.max())
    n_lo, n_hi = int((y == lo).sum()), int((y == hi).sum())
    boundary = ((n_lo if n_lo > 1 else 0) + (n_hi if n_hi > 1 else 0)) / y.size
    ev.update(boundary_share=boundary, outcome_min=lo, outcome_max=hi)
    if boundary > contract.threshold("boundary_flag"):
        worst = max(worst, Status.FLAG, key=_rank)
        notes.append(f"{boundary:.1%} of observations sit at the observed minimum or maximum.")

    # support before and after adoption
    if g0 is not None:
        pre, post = y[panel.time < g0], y[panel.time >= g0]
        if pre.size and post.size:
            pre_share, post_share = _distinct_share(pre), _distinct_share(post)
            ratio = post_share / pre_share
            ev.update(
                pre_distinct_share=pre_share,
                post_distinct_share=post_share,
                support_distinct_ratio=ratio,
                pre_range=float(pre.max() - pre.min()),
                post_range=float(post.max() - post.min()),
            )
            if ratio < contract.threshold("support_drop"):
                worst = max(worst, Status.FLAG, key=_rank)
                notes.append(f"Distinct-value share falls from {pre_share:.2f} to {post_share:.2f} after adoption.")
            hi_edge = float(y.max()) if y.max() > y.min() else float(y.min()) + 1.0
            plots["outcome_support.svg"] = svg.histogram(
                {"pre": pre, "post": post}, "Outcome distribution before and after adoption", bins=20,
                value_range=(float(y.min()), hi_edge), xlabel="outcome",
            )
    if not notes:
        notes.append("No coding break, boundary mass or support collapse detected.")
    return DiagnosticResult(worst, ev, " ".join(notes), plots=plots)


def _rank(s: Status) -> int:
    return {Status.PASS: 0, Status.FLAG: 1, Status.STOP: 2}.get(s, 0)


def diag_overlap(panel: Panel, contract: MethodDataContract) -> DiagnosticResult:
    if not panel.covariates:
        return DiagnosticResult(Status.UNVERIFIABLE, reason="no-covariates", narrative="No covariates for a propensity model.")
    g0 = _earliest_adoption(panel)
    base = panel.time < g0 if g0 is not None else np.ones(panel.n_obs, dtype=bool)
    if not base.any():
        base = np.ones(panel.n_obs, dtype=bool)
    cols = _covariate_columns(panel, base, drop_first=True)
    units = panel.unit[base]
    n = panel.unit_count
    counts = np.bincount(units, minlength=n).astype(float)
    present = counts > 0
    x = [np.ones(int(present.sum()))]
    for col in cols.values():
        x.append((np.bincount(units, weights=col, minlength=n) / np.where(present, counts, 1.0))[present])
    x = np.column_stack(x)
    d = panel.treated_unit[present].astype(float)
    try:
        fit = logistic_fit(x, d)
    except Separation:
        return DiagnosticResult(Status.UNVERIFIABLE, reason="separation", narrative="Covariates separate the groups perfectly.")
    except NoVariation:
        return DiagnosticResult(Status.UNVERIFIABLE, reason="no-variation", narrative="Only one group present.")
    ps = 1.0 / (1.0 + np.exp(-(x @ fit.coefficients)))
    pt, pc = ps[d == 1], ps[d == 0]
    off = float(np.mean((pt < pc.min()) | (pt > pc.max())))
    ev = {"off_support_share": off, "control_min": float(pc.min()), "control_max": float(pc.max())}
    plots = {"overlap.svg": svg.histogram({"treated": pt, "control": pc}, "Propensity scores by group", xlabel="propensity")}
    if off > contract.threshold("overlap_stop"):
        status = Status.STOP
    elif off > contract.threshold("overlap_flag"):
        status = Status.FLAG
    else:
        status = Status.PASS
    return DiagnosticResult(status, ev, f"{off:.1%} of treated units fall outside the control propensity range.", plots=plots)


def diag_staggering(panel: Panel, contract: MethodDataContract) -> DiagnosticResult:
    cohorts: dict[int, int] = {}
    for a in panel.adoption:
        if a is not None:
            cohorts[a] = cohorts.get(a, 0) + 1
    ev: dict[str, float] = {"cohort_count": len(cohorts)}
    ev.update({f"cohort.{g}": n for g, n in sorted(cohorts.items())})
    if len(cohorts) > 1:
        return DiagnosticResult(Status.BRANCH, ev, f"Adoption is staggered across {len(cohorts)} periods: {sorted(cohorts)}.")
    return DiagnosticResult(Status.PASS, ev, "Single adoption time.")


def diag_control_cohort(panel: Panel, contract: MethodDataContract) -> DiagnosticResult:
    never = sum(1 for a in panel.adoption if a is None)
    ev = {"never_treated": never}
    if never >= 2:
        return DiagnosticResult(Status.PASS, ev, f"{never} never-treated units available as controls.")
    if never == 1:
        return DiagnosticResult(Status.FLAG, ev, "Only one never-treated unit.")
    return DiagnosticResult(Status.STOP, ev, "No never-treated units; only not-yet-treated comparisons are possible.")


def diag_its_periods(panel: Panel, contract: MethodDataContract) -> DiagnosticResult:
    g0 = _earliest_adoption(panel)
    if g0 is None:
        return DiagnosticResult(Status.UNVERIFIABLE, reason="no-interruption", narrative="No interruption date.")
    before = sum(1 for t in panel.periods if t < g0)
    after = len(panel.periods) - before
    need = contract.threshold("its_min_periods")
    ev = {"periods_before": before, "periods_after": after}
    if before < need or after < need:
        return DiagnosticResult(Status.STOP, ev, f"{before} periods before and {after} after; {need:g} needed on each side.")
    return DiagnosticResult(Status.PASS, ev, f"{before} periods before and {after} after the interruption.")


DIAGNOSTICS: Mapping[str, Callable[[Panel, MethodDataContract], DiagnosticResult]] = {
    "unit_grain": diag_unit_grain,
    "provenance": diag_provenance,
    "pre_periods": diag_pre_periods,
    "group_sources": diag_group_sources,
    "parallel_trends": diag_parallel_trends,
    "balance": diag_balance,
    "outcome_integrity": diag_outcome_integrity,
    "overlap": diag_overlap,
    "staggering": diag_staggering,
    "control_cohort": diag_control_cohort,
    "its_periods": diag_its_periods,
}


# --- classification ----------------------------------------------------------------


def apply_policy(req: Requirement, raw: Status) -> Status:
    """Cap a raw diagnostic severity by the requirement's policy."""
    if raw in (Status.PASS, Status.UNVERIFIABLE):
        return raw
    kind = req.policy.kind
    if kind is PolicyKind.BRANCH:
        return Status.BRANCH
    if kind is PolicyKind.FLAG:
        return Status.FLAG
    return Status.STOP if raw in (Status.STOP, Status.BRANCH) else Status.FLAG


_FAIL = {PolicyKind.STOP: Status.STOP, PolicyKind.FLAG: Status.FLAG, PolicyKind.BRANCH: Status.BRANCH}


def _attested_finding(req: Requirement, answer: str) -> AuditFinding:
    norm = answer.strip().lower()
    if norm == "no":
        status, reason, text = _FAIL[req.policy.kind], "", f"Attested no: {req.binding.value}"
    elif norm == "declined":
        status, reason, text = Status.UNVERIFIABLE, "declined", "The analyst declined to answer."
    else:
        status, reason, text = Status.PASS, "", f"Attested {answer.strip()}: {req.binding.value}"
    return AuditFinding(req.id, status, req.policy.render(), "", {}, (), text, reason)


def _diagnostic_finding(req: Requirement, panel: Panel, contract: MethodDataContract, plots: dict) -> AuditFinding:
    diag = req.binding.value
    try:
        res = DIAGNOSTICS[diag](panel, contract)
    except ZeroVariance as err:
        res = DiagnosticResult(Status.UNVERIFIABLE, reason="zero-variance", narrative=f"Covariate {err.covariate} has no variance.")
    plots.update(res.plots)
    status = apply_policy(req, res.status)
    reason = res.reason if status is Status.UNVERIFIABLE else ""
    return AuditFinding(
        req.id, status, req.policy.render(), diag, _finite(res.evidence), tuple(sorted(res.plots)), res.narrative, reason
    )


def run_audit(panel: Panel, contract: MethodDataContract, attestations: Mapping[str, str]) -> AuditReport:
    """One finding per active requirement, splicing branch targets as they fire."""
    active = tuple(contract.requirements)
    plots: dict[str, str] = {}
    findings: dict[str, AuditFinding] = {}
    spliced: set[str] = set()
    pending = list(active)
    while pending:
        for req in pending:
            if req.binding.automatic:
                findings[req.id] = _diagnostic_finding(req, panel, contract, plots)
            elif req.id in attestations:
                findings[req.id] = _attested_finding(req, attestations[req.id])
        pending = []
        for req in active:
            f = findings.get(req.id)
            target = req.policy.target
            if f is not None and f.status is Status.BRANCH and target not in spliced:
                spliced.add(target)
                grown = splice(active, target)
                pending.extend(grown[len(active) :])
                active = grown
    missing = sorted(r.id for r in active if not r.binding.automatic and r.id not in attestations)
    if missing:
        raise MissingAttestation(missing)
    ordered = tuple(sorted(findings.values(), key=lambda f: f.requirement_id))
    return AuditReport(
        method=contract.method.value,
        findings=ordered,
        gate=compute_gate(ordered),
        contract_digest=contract_digest(contract),
        panel_digest=panel.digest(),
        attestations_digest=attestations_digest(attestations),
        plot_digests={name: kvfile.sha256_hex(text.encode("utf-8")) for name, text in sorted(plots.items())},
        plots=dict(sorted(plots.items())),
    )


# --- attestations file ----------------------------------------------------------------


def attestations_digest(answers: Mapping[str, str]) -> str:
    return kvfile.digest(dict(sorted(answers.items())))


def parse_attestations(data: bytes | str) -> dict[str, str]:
    doc = kvfile.parse(data)
    sec = doc.get("attestations")
    extra = [s.name for s in doc.sections if s.name != "attestations"]
    if extra:
        raise SchemaError([f"UnknownSection: [{name}]" for name in extra])
    return dict(sec.entries) if sec else {}


# --- report file ----------------------------------------------------------------------


def serialize_report(r: AuditReport) -> bytes:
    head = [
        ("method", r.method),
        ("gate", r.gate),
        ("contract_digest", r.contract_digest),
        ("panel_digest", r.panel_digest),
        ("attestations_digest", r.attestations_digest),
    ]
    sections = [("audit", head)]
    if r.plot_digests:
        sections.append(("plots", sorted(r.plot_digests.items())))
    for f in r.findings:
        entries = [
            ("status", f.status.value),
            ("policy", f.policy),
            ("diagnostic", f.diagnostic),
            ("reason", f.reason),
            ("plots", kvfile.format_list(f.plot_refs)),
            ("narrative", f.narrative),
        ]
        entries += [(f"evidence.{k}", kvfile.format_number(v)) for k, v in sorted(f.evidence.items())]
        sections.append((f"finding.{f.requirement_id}", entries))
    return kvfile.render(sections)


def parse_report(data: bytes | str) -> AuditReport:
    doc = kvfile.parse(data)
    head = doc.get("audit")
    if head is None:
        raise ParseError("missing [audit] section", 1, 1)
    findings = []
    for sec in doc.with_prefix("finding."):
        e = sec.entries
        try:
            status = Status(e["status"])
        except (KeyError, ValueError):
            raise ParseError(f"[{sec.name}] has no valid status", sec.line, 1) from None
        evidence = {k[len("evidence.") :]: float(kvfile.parse_number(v)) for k, v in e.items() if k.startswith("evidence.")}
        findings.append(
            AuditFinding(
                sec.name[len("finding.") :],
                status,
                e.get("policy", ""),
                e.get("diagnostic", ""),
                evidence,
                tuple(kvfile.parse_list(e.get("plots", "[]"))),
                e.get("narrative", ""),
                e.get("reason", ""),
            )
        )
    plots = doc.get("plots")
    try:
        return AuditReport(
            head.entries["method"],
            tuple(findings),
            head.entries["gate"],
            head.entries["contract_digest"],
            head.entries["panel_digest"],
            head.entries["attestations_digest"],
            dict(plots.entries) if plots else {},
        )
    except KeyError as err:
        raise ParseError(f"[audit] is missing {err.args[0]!r}", head.line, 1) from None


# --- metrics exposed to falsification criteria ---------------------------------------

_METRIC_SOURCES = {
    "pretrend.p": ("parallel_trends", "p_value"),
    "pretrend.slope_difference": ("parallel_trends", "slope_difference"),
    "pretrend.leads_p": ("parallel_trends", "leads_p"),
    "preperiods.count": ("pre_periods", "count"),
    "balance.max_abs_smd": ("balance", "max_abs_smd"),
    "overlap.off_support_share": ("overlap", "off_support_share"),
    "break.p": ("outcome_integrity", "break_p"),
    "boundary.share": ("outcome_integrity", "boundary_share"),
    "support.distinct_ratio": ("outcome_integrity", "support_distinct_ratio"),
}
AUDIT_METRICS = tuple(_METRIC_SOURCES)


def audit_metrics(report: AuditReport) -> dict[str, float]:
    by_diag = {f.diagnostic: f for f in report.findings if f.diagnostic}
    out = {}
    for metric, (diag, key) in _METRIC_SOURCES.items():
        f = by_diag.get(diag)
        if f is not None and key in f.evidence:
            out[metric] = f.evidence[key]
    return out
