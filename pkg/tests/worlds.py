"""End-to-end fixtures: an audited panel, a locked statement and a populated ledger.

Each builder returns a ``World`` holding everything ``report.assemble`` needs.
The gate-conjunct fixtures each break exactly one condition of the causal label.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

from acx import commitment as cm
from acx.audit import AuditReport, run_audit
from acx.contract import MethodDataContract, builtin_contract
from acx.estimators import SpecDescriptor, run_estimator
from acx.ledger import GENESIS_DIGEST, Ledger, lock_entry, make_entry, record_estimate
from acx.panel import Panel
from acx.report import FinalReport, assemble
from acx.synth import FORKING_SEQUENCE, default_attestations, generate, scenario

EPOCH = "1767225600"  # 2026-01-01T00:00:00Z
LOCKED_AT = "2026-01-01T00:00:00Z"


@contextmanager
def fixed_clock():
    old = os.environ.get("SOURCE_DATE_EPOCH")
    os.environ["SOURCE_DATE_EPOCH"] = EPOCH
    try:
        yield
    finally:
        if old is None:
            del os.environ["SOURCE_DATE_EPOCH"]
        else:
            os.environ["SOURCE_DATE_EPOCH"] = old


@dataclass
class World:
    panel: Panel
    contract: MethodDataContract
    audit: AuditReport
    ledger: Ledger
    commitment: cm.PreCommitment | None = None
    reported_index: int | None = None

    def statement_bytes(self) -> bytes:
        return cm.serialize(self.commitment)

    def check(self) -> cm.CommitmentCheck | None:
        if self.commitment is None:
            return None
        return cm.verify(self.statement_bytes(), lock_entry(self.ledger.entries()))

    def report(self) -> FinalReport:
        return assemble(
            self.contract,
            self.audit,
            self.audit.plots,
            self.commitment,
            self.check(),
            self.ledger.read_bytes(),
            self.reported_index,
        )


def statement(primary: SpecDescriptor | None = None, **kw) -> cm.PreCommitment:
    base = dict(
        primary_spec=primary or SpecDescriptor("DiD2x2"),
        criteria=(cm.Criterion("pre-trend", "pretrend.p < 0.10"),),
        reporting=("Report every specification in the ledger.",),
        coi_narrative="None declared.",
    )
    base.update(kw)
    return cm.PreCommitment(**base)


def audited(name: str, directory: Path, seed: int | None = None, answers: dict | None = None) -> World:
    spec = scenario(name)
    panel, _ = generate(spec, seed)
    contract = builtin_contract(spec.method)
    report = run_audit(panel, contract, answers or default_attestations(spec))
    return World(panel, contract, report, Ledger.create(Path(directory) / f"{name}.acxl"))


def _estimate(w: World, spec: SpecDescriptor, confirmatory: bool, label: str = ""):
    r = run_estimator(w.panel, spec, n_boot=49)
    return record_estimate(w.ledger, r.summary(), confirmatory=confirmatory, label=label)


def _lock(w: World, pc: cm.PreCommitment) -> None:
    w.commitment = cm.lock(pc, w.ledger, w.audit, locked_at=LOCKED_AT)


def all_pass(directory: Path) -> World:
    with fixed_clock():
        w = audited("clean-2x2", directory)
        _lock(w, statement())
        _estimate(w, w.commitment.primary_spec, True, cm.PRIMARY)
    return w


def fails_audit(directory: Path) -> World:
    """Blocked audit, otherwise compliant (locked under a descriptive downgrade)."""
    with fixed_clock():
        w = audited("health-plan-2.1", directory)
        _lock(w, statement(downgrade=cm.DOWNGRADE_DESCRIPTIVE))
        _estimate(w, w.commitment.primary_spec, True, cm.PRIMARY)
    return w


def fails_lock(directory: Path) -> World:
    """A self-consistent statement that was never recorded in this ledger."""
    with fixed_clock():
        w = audited("clean-2x2", directory)
        pc = replace(statement(), audit_digest=w.audit.digest(), locked_at=LOCKED_AT)
        w.commitment = replace(pc, lock_digest=pc.compute_lock_digest())
        _estimate(w, w.commitment.primary_spec, False, cm.PRIMARY)
    return w


def fails_order(directory: Path) -> World:
    """A confirmatory record written ahead of the lock by bypassing the public API."""
    with fixed_clock():
        w = audited("clean-2x2", directory)
        primary = statement().primary_spec
        summary = run_estimator(w.panel, primary).summary()
        early = make_entry(1, "Estimate", {**summary, "label": cm.PRIMARY}, "confirmatory", GENESIS_DIGEST, LOCKED_AT)
        w.ledger.append_entry(early)
        _lock(w, statement())
        _estimate(w, primary, True, cm.PRIMARY)
    return w


def fails_spec(directory: Path) -> World:
    """The reported estimate is an exploratory alternative, not the locked primary."""
    with fixed_clock():
        w = audited("clean-2x2", directory)
        _lock(w, statement())
        _estimate(w, w.commitment.primary_spec, True, cm.PRIMARY)
        alt = _estimate(w, SpecDescriptor("TWFE_Static"), False, "twfe")
        w.reported_index = alt.index
    return w


def fails_coi(directory: Path) -> World:
    """Stake declared, no independent review."""
    with fixed_clock():
        w = audited("clean-2x2", directory)
        _lock(w, statement(has_stake=True))
        _estimate(w, w.commitment.primary_spec, True, cm.PRIMARY)
    return w


def reviewed_coi(directory: Path) -> World:
    w = fails_coi(directory)
    w.commitment = cm.sign_review(w.commitment, "Independent Reviewer", LOCKED_AT)
    return w


CONJUNCT_FIXTURES = {
    "audit-blocked": fails_audit,
    "not-locked": fails_lock,
    "lock-order": fails_order,
    "spec-mismatch": fails_spec,
    "coi-unreviewed": fails_coi,
}


def saas_replay(directory: Path) -> World:
    """The four-step specification search recorded as exploratory runs."""
    with fixed_clock():
        w = audited("saas-forking-2.3", directory)
        for label, spec in FORKING_SEQUENCE:
            _estimate(w, SpecDescriptor.from_dict(spec), False, label)
    return w
