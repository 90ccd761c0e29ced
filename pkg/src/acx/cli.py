"""Command-line interface.

Exit codes: 0 ok, 2 gate blocked or refused, 3 validation error, 4 tamper detected.
``ACX_SEED`` overrides the default seed of every seeded command.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import audit as audit_mod
from . import commitment as cm
from .contract import MethodKind, builtin_contract, parse_contract_file, serialize_contract, validate_contract
from .errors import AcxError, GateRefused, SchemaError
from .estimators import DEFAULT_BOOTSTRAP, DEFAULT_SEED, ESTIMATORS, SpecDescriptor, run_estimator
from .ledger import Ledger, lock_entry, multiplicity, record_audit, record_estimate, record_note, verify
from .panel import ingest, parse_schema
from .report import build_report, default_reported, ledger_metrics
from .synth import export, scenario, scenario_catalog

EXIT_OK, EXIT_BLOCKED, EXIT_INVALID, EXIT_TAMPER = 0, 2, 3, 4


def default_seed() -> int:
    value = os.environ.get("ACX_SEED")
    return int(value) if value else DEFAULT_SEED


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_panel(args):
    return ingest(Path(args.panel).read_bytes(), parse_schema(Path(args.schema).read_bytes()))


def _plots_dir(audit_path: str | Path) -> Path:
    return Path(audit_path).parent / "plots"


def _read_plots(audit_path: str | Path, report: audit_mod.AuditReport) -> dict[str, str]:
    d = _plots_dir(audit_path)
    return {name: (d / name).read_text("utf-8") for name in report.plot_digests if (d / name).exists()}


# --- contract --------------------------------------------------------------------------


def cmd_contract_init(args) -> int:
    data = serialize_contract(builtin_contract(MethodKind(args.method)))
    Path(args.out).write_bytes(data)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_contract_validate(args) -> int:
    contract = parse_contract_file(Path(args.contract).read_bytes())
    problems = validate_contract(contract)
    for p in problems:
        print(p)
    if problems:
        return EXIT_INVALID
    print(f"ok: {contract.method.value}, {len(contract.requirements)} requirements")
    return EXIT_OK


# --- audit -----------------------------------------------------------------------------


def cmd_audit_run(args) -> int:
    panel = _load_panel(args)
    contract = parse_contract_file(Path(args.contract).read_bytes())
    answers = audit_mod.parse_attestations(Path(args.attestations).read_bytes()) if args.attestations else {}
    report = audit_mod.run_audit(panel, contract, answers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(audit_mod.serialize_report(report))
    plots = _plots_dir(out)
    plots.mkdir(exist_ok=True)
    for name, text in sorted(report.plots.items()):
        (plots / name).write_bytes(text.encode("utf-8"))
    if args.ledger:
        record_audit(Ledger.create(args.ledger), report.digest(), report.gate)
    for f in report.findings:
        extra = f" ({f.reason})" if f.reason else ""
        print(f"{f.status.value:<13} {f.requirement_id}{extra}")
    print(f"gate: {report.gate}")
    return EXIT_BLOCKED if report.gate == audit_mod.BLOCKED else EXIT_OK


# --- commitment ------------------------------------------------------------------------


def cmd_commit_init(args) -> int:
    pc = cm.PreCommitment(
        primary_spec=SpecDescriptor(args.estimator),
        criteria=(cm.Criterion("pre-period divergence", "pretrend.p < 0.10"),),
        reporting=("Report every specification in the ledger with its p-value.",),
    )
    Path(args.out).write_bytes(cm.serialize(pc))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_commit_lock(args) -> int:
    pc = cm.parse(Path(args.statement).read_bytes())
    report = audit_mod.parse_report(Path(args.audit).read_bytes()) if Path(args.audit).exists() else None
    locked = cm.lock(pc, Ledger.create(args.ledger), report, locked_at=args.locked_at)
    Path(args.out or args.statement).write_bytes(cm.serialize(locked))
    print(f"locked: {locked.lock_digest}")
    return EXIT_OK


def cmd_commit_verify(args) -> int:
    lock = None
    if args.ledger:
        res = verify(Path(args.ledger).read_bytes())
        if not res.ok:
            print(f"ledger broken at entry {res.first_broken}: {res.detail}")
            return EXIT_TAMPER
        lock = lock_entry(Ledger(args.ledger).entries())
        if lock is None:
            print("ledger has no Lock entry")
            return EXIT_TAMPER
    check = cm.verify(Path(args.statement).read_bytes(), lock)
    for p in check.problems:
        print(p)
    if not check.ok:
        return EXIT_TAMPER
    print(f"ok: {check.statement.lock_digest}")
    return EXIT_OK


def cmd_commit_review(args) -> int:
    pc = cm.parse(Path(args.statement).read_bytes())
    signed = cm.sign_review(pc, args.reviewer, args.reviewed_at)
    Path(args.statement).write_bytes(cm.serialize(signed))
    print(f"review signed by {args.reviewer}")
    return EXIT_OK


# --- estimation ------------------------------------------------------------------------


def _spec_from_args(args, pc: cm.PreCommitment | None) -> tuple[SpecDescriptor, str]:
    if args.estimator:
        window = None
        if args.window:
            lo, _, hi = args.window.partition("..")
            window = (int(lo), int(hi))
        covs = tuple(c for c in (args.covariates or "").split(",") if c)
        spec = SpecDescriptor(args.estimator, args.filter or "", window, covs, args.control)
        return spec, args.label or ""
    if pc is None:
        raise SchemaError(["give --estimator or a --statement naming the specification"])
    name = args.spec or cm.PRIMARY
    specs = pc.specs()
    if name not in specs:
        raise SchemaError([f"statement has no specification named {name!r}"])
    return specs[name], args.label or name


def cmd_estimate_run(args) -> int:
    pc = cm.parse(Path(args.statement).read_bytes()) if args.statement else None
    led = Ledger.create(args.ledger)
    if args.confirmatory:
        lock = lock_entry(led.entries())
        if pc is None or lock is None:
            raise GateRefused("confirmatory estimation requires a locked commitment")
        check = cm.verify(Path(args.statement).read_bytes(), lock)
        if not check.ok:
            raise GateRefused("commitment does not verify: " + "; ".join(check.problems))
        if lock.payload.get("audit_gate") == audit_mod.BLOCKED:
            raise GateRefused("the audit gate is Blocked; only exploratory estimation is permitted")
        if args.estimator or (args.spec and args.spec != cm.PRIMARY):
            raise GateRefused("confirmatory estimation runs the locked primary specification only")
    spec, label = _spec_from_args(args, pc)
    result = run_estimator(_load_panel(args), spec, seed=args.seed, n_boot=args.n_boot)
    entry = record_estimate(led, result.summary(), confirmatory=args.confirmatory, label=label)
    _emit({"entry": entry.index, "taint": entry.taint, **result.summary()})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pc = cm.parse(Path(args.statement).read_bytes())
    metrics = {}
    if args.audit:
        metrics.update(audit_mod.audit_metrics(audit_mod.parse_report(Path(args.audit).read_bytes())))
    if args.ledger:
        entries = Ledger(args.ledger).entries()
        metrics.update(ledger_metrics(entries, default_reported(entries)))
    verdict = cm.evaluate(pc, metrics)
    for c in verdict.per_criterion:
        state = "TRIGGERED" if c.triggered else "ok"
        missing = f" missing={list(c.missing)}" if c.missing else ""
        print(f"{state:<10} {c.label}: {c.expression} inputs={dict(c.inputs)}{missing}")
    print(f"overall: {verdict.overall}")
    return EXIT_OK


# --- report ----------------------------------------------------------------------------


def cmd_report_build(args) -> int:
    contract = parse_contract_file(Path(args.contract).read_bytes())
    report = audit_mod.parse_report(Path(args.audit).read_bytes())
    pc = check = None
    if args.statement:
        data = Path(args.statement).read_bytes()
        ledger_entries = Ledger(args.ledger).entries()
        check = cm.verify(data, lock_entry(ledger_entries))
        pc = check.statement
    final = build_report(
        args.out,
        contract,
        report,
        _read_plots(args.audit, report),
        pc,
        check,
        Path(args.ledger).read_bytes(),
        args.reported_entry,
    )
    print(f"label: {final.label.label}" + (f" ({', '.join(final.label.reasons)})" if final.label.reasons else ""))
    print(f"wrote {Path(args.out) / 'report.md'}")
    return EXIT_OK


# --- ledger ----------------------------------------------------------------------------


def cmd_ledger_verify(args) -> int:
    res = verify(Path(args.ledger).read_bytes())
    if res.ok:
        print(f"ok: {res.entries} entries")
        return EXIT_OK
    print(f"broken at entry {res.first_broken}: {res.detail}")
    return EXIT_TAMPER


def cmd_ledger_multiplicity(args) -> int:
    m = multiplicity(Ledger(args.ledger).entries())
    _emit(
        {
            "total_specs": m.total_specs,
            "distinct_specs": m.distinct_specs,
            "confirmatory": m.confirmatory,
            "exploratory": m.exploratory,
            "selection_flag": m.selection_flag,
            "chronology": [
                {"index": c.index, "fingerprint": c.fingerprint, "p_value": c.p_value, "effect": c.effect, "taint": c.taint, "label": c.label}
                for c in m.chronology
            ],
        }
    )
    return EXIT_OK


def cmd_ledger_note(args) -> int:
    entry = record_note(Ledger.create(args.ledger), args.text)
    print(f"note recorded as entry {entry.index}")
    return EXIT_OK


# --- synth -----------------------------------------------------------------------------


def cmd_synth_generate(args) -> int:
    spec = scenario(args.scenario)
    seed = args.seed if args.seed is not None else (int(os.environ["ACX_SEED"]) if os.environ.get("ACX_SEED") else None)
    files = export(spec, args.out, seed)
    for path in files.values():
        print(path)
    return EXIT_OK


def cmd_synth_list(args) -> int:
    for s in scenario_catalog():
        print(f"{s.name:<22} {s.method:<13} violation={s.violation}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acx", description="Analysis-contract gate for panel-data causal analyses.")
    sub = p.add_subparsers(dest="group", required=True)

    contract = sub.add_parser("contract", help="write or validate a method-data contract").add_subparsers(dest="verb", required=True)
    c = contract.add_parser("init", help="write a builtin contract template")
    c.add_argument("--method", required=True, choices=[m.value for m in MethodKind])
    c.add_argument("--out", default="contract.acx")
    c.set_defaults(func=cmd_contract_init)
    c = contract.add_parser("validate", help="parse and check a contract file")
    c.add_argument("contract")
    c.set_defaults(func=cmd_contract_validate)

    audit = sub.add_parser("audit", help="run the data audit").add_subparsers(dest="verb", required=True)
    a = audit.add_parser("run", help="audit a panel against a contract")
    a.add_argument("--panel", required=True)
    a.add_argument("--schema", required=True)
    a.add_argument("--contract", required=True)
    a.add_argument("--attestations")
    a.add_argument("--out", default="audit.acxr")
    a.add_argument("--ledger", help="also record an Audit entry in this ledger")
    a.set_defaults(func=cmd_audit_run)

    commit = sub.add_parser("commit", help="author, lock, verify and review a pre-commitment statement").add_subparsers(dest="verb", required=True)
    k = commit.add_parser("init", help="write a statement template")
    k.add_argument("--estimator", default="DiD2x2", choices=ESTIMATORS)
    k.add_argument("--out", default="precommit.acx")
    k.set_defaults(func=cmd_commit_init)
    k = commit.add_parser("lock", help="lock a statement against an audit and record it in the ledger")
    k.add_argument("--statement", required=True)
    k.add_argument("--audit", required=True)
    k.add_argument("--ledger", required=True)
    k.add_argument("--out", help="write the locked statement here instead of in place")
    k.add_argument("--locked-at", help="UTC timestamp to record (default: now)")
    k.set_defaults(func=cmd_commit_lock)
    k = commit.add_parser("verify", help="check a statement digest, review and ledger lock")
    k.add_argument("--statement", required=True)
    k.add_argument("--ledger")
    k.set_defaults(func=cmd_commit_verify)
    k = commit.add_parser("review", help="countersign a locked statement as independent reviewer")
    k.add_argument("--statement", required=True)
    k.add_argument("--reviewer", required=True)
    k.add_argument("--reviewed-at")
    k.set_defaults(func=cmd_commit_review)

    estimate = sub.add_parser("estimate", help="run an estimator and record it in the ledger").add_subparsers(dest="verb", required=True)
    e = estimate.add_parser("run", help="run one specification")
    mode = e.add_mutually_exclusive_group(required=True)
    mode.add_argument("--exploratory", action="store_true")
    mode.add_argument("--confirmatory", action="store_true")
    e.add_argument("--panel", required=True)
    e.add_argument("--schema", required=True)
    e.add_argument("--ledger", required=True)
    e.add_argument("--statement")
    e.add_argument("--spec", help="named specification from the statement (default: primary)")
    e.add_argument("--estimator", choices=ESTIMATORS, help="ad hoc specification (exploratory only)")
    e.add_argument("--filter", help="sample filter, e.g. 'channel == paid'")
    e.add_argument("--window", help="outcome window lo..hi")
    e.add_argument("--covariates", help="comma-separated covariate names")
    e.add_argument("--control", default="never-treated", choices=["never-treated", "not-yet-treated"])
    e.add_argument("--label")
    e.add_argument("--seed", type=int, default=default_seed())
    e.add_argument("--n-boot", type=int, default=DEFAULT_BOOTSTRAP)
    e.set_defaults(func=cmd_estimate_run)

    ev = sub.add_parser("evaluate", help="evaluate falsification criteria")
    ev.add_argument("--statement", required=True)
    ev.add_argument("--audit")
    ev.add_argument("--ledger")
    ev.set_defaults(func=cmd_evaluate)

    report = sub.add_parser("report", help="build the final report").add_subparsers(dest="verb", required=True)
    r = report.add_parser("build", help="write report.md, report.acxr and plots")
    r.add_argument("--contract", required=True)
    r.add_argument("--audit", required=True)
    r.add_argument("--ledger", required=True)
    r.add_argument("--statement")
    r.add_argument("--reported-entry", type=int)
    r.add_argument("--out", default="report")
    r.set_defaults(func=cmd_report_build)

    ledger = sub.add_parser("ledger", help="inspect or annotate a fork ledger").add_subparsers(dest="verb", required=True)
    g = ledger.add_parser("verify", help="check the hash chain")
    g.add_argument("ledger")
    g.set_defaults(func=cmd_ledger_verify)
    g = ledger.add_parser("multiplicity", help="summarise every specification attempted")
    g.add_argument("ledger")
    g.set_defaults(func=cmd_ledger_multiplicity)
    g = ledger.add_parser("note", help="append a free-text Note entry")
    g.add_argument("ledger")
    g.add_argument("--text", required=True)
    g.set_defaults(func=cmd_ledger_note)

    synth = sub.add_parser("synth", help="generate synthetic panels with known ground truth").add_subparsers(dest="verb", required=True)
    s = synth.add_parser("generate", help="write a scenario panel with its contract and ground truth")
    s.add_argument("--scenario", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_generate)
    s = synth.add_parser("list", help="list the scenario catalog")
    s.set_defaults(func=cmd_synth_list)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AcxError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return err.exit_code
    except (OSError, ValueError, KeyError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
