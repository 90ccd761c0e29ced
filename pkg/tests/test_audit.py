import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acx.audit import (
    BLOCKED,
    DIAGNOSTICS,
    OPEN,
    AuditFinding,
    Status,
    audit_metrics,
    compute_gate,
    control_break_test,
    diag_balance,
    diag_overlap,
    diag_pre_periods,
    parse_attestations,
    parse_report,
    run_audit,
    serialize_report,
    standardized_mean_difference,
)
from acx.contract import DIAGNOSTIC_METHODS, builtin_contract
from acx.errors import MissingAttestation, ZeroVariance
from acx.svg import read_series
from acx.synth import default_attestations, generate, scenario, serialize_attestations

from .test_estimators import make_panel


def _audit(name, **changes):
    spec = replace(scenario(name), **changes)
    panel, truth = generate(spec)
    return panel, truth, run_audit(panel, builtin_contract(spec.method), default_attestations(spec))


def _non_pass(report):
    return {f.requirement_id: f.status.value for f in report.findings if f.status is not Status.PASS}


def test_registry_matches_contract_model():
    assert set(DIAGNOSTICS) == set(DIAGNOSTIC_METHODS)


def test_clean_2x2_all_pass():
    _, _, report = _audit("clean-2x2")
    assert _non_pass(report) == {}
    assert report.gate == OPEN


def test_health_plan_case():
    _, truth, report = _audit("health-plan-2.1")
    assert report.finding("group-definition").status is Status.STOP
    assert report.finding("pre-periods").status is Status.FLAG
    assert report.finding("pre-periods").evidence["count"] == 2
    trends = report.finding("pre-trends")
    assert trends.status is Status.UNVERIFIABLE and trends.reason == "too-few-pre-periods"
    assert report.gate == BLOCKED
    for rid, status in truth.expected_findings.items():
        assert report.finding(rid).status.value == status


@pytest.mark.parametrize(
    "name",
    ["diverging-pretrends", "pay-equity-2.1", "education-its-2.2", "support-failure", "compression"],
)
def test_expected_findings_fire(name):
    _, truth, report = _audit(name)
    for rid, status in truth.expected_findings.items():
        assert report.finding(rid).status.value == status, rid


def test_negative_control_passes():
    _, truth, report = _audit("aggregation-mismatch")
    assert truth.detectable is False
    assert report.gate == OPEN


def test_staggered_panel_branches_under_did():
    spec = scenario("staggered-het")
    panel, _ = generate(spec)
    answers = {"robust-estimator": "yes", "control-cohort": "never-treated"}
    report = run_audit(panel, builtin_contract("DiD2x2"), answers)
    f = report.finding("staggered-timing")
    assert f.status is Status.BRANCH
    assert f.evidence["cohort_count"] == 2
    assert f.evidence["cohort.2"] == 25 and f.evidence["cohort.6"] == 25
    ids = {x.requirement_id for x in report.findings}
    assert {"robust-estimator", "control-cohort", "never-treated"} <= ids
    with pytest.raises(MissingAttestation) as err:
        run_audit(panel, builtin_contract("DiD2x2"), {})
    assert err.value.ids == ("control-cohort", "robust-estimator")


def test_single_adoption_no_branch():
    _, _, report = _audit("clean-2x2")
    assert report.finding("staggered-timing").status is Status.PASS


def test_pre_period_counts():
    contract = builtin_contract("DiD2x2")
    y = np.zeros((4, 6))
    assert diag_pre_periods(make_panel(y, [3, 3, None, None]), contract).evidence["count"] == 3
    assert diag_pre_periods(make_panel(y, [0, 0, None, None]), contract).status is Status.STOP
    assert diag_pre_periods(make_panel(y, [2, 2, None, None]), contract).status is Status.FLAG


def test_smd_direct_formula():
    h = math.sqrt(0.5)
    assert standardized_mean_difference(np.array([1 - h, 1 + h]), np.array([-h, h])) == pytest.approx(1.0, abs=1e-15)
    same = np.array([1.0, 2.0, 4.0])
    assert standardized_mean_difference(same, same) == 0.0
    with pytest.raises(ZeroVariance):
        standardized_mean_difference(np.ones(3), np.ones(3), "flat")


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0.01, 100), b=st.floats(-1e3, 1e3))
def test_smd_affine_invariance(a, b):
    rng = np.random.default_rng(0)
    t, c = rng.normal(0.3, 1, 30), rng.normal(0, 1.5, 25)
    base = standardized_mean_difference(t, c)
    assert standardized_mean_difference(a * t + b, a * c + b) == pytest.approx(base, rel=1e-9, abs=1e-12)
    assert standardized_mean_difference(-t, -c) == pytest.approx(-base, rel=1e-12)


def test_balance_identical_groups_zero():
    panel, _ = generate(scenario("clean-2x2"))
    res = diag_balance(panel, builtin_contract("DiD2x2"))
    assert res.evidence["max_abs_smd"] <= 1e-12
    assert res.status is Status.PASS


def test_pay_equity_balance_pass_but_construct_stop():
    _, _, report = _audit("pay-equity-2.1")
    assert report.finding("baseline-balance").status is Status.PASS
    assert report.finding("construct-comparability").status is Status.STOP
    assert report.finding("overlap").evidence["off_support_share"] == 0.0


def test_plot_matches_direct_aggregation():
    panel, _, report = _audit("clean-2x2")
    drawn = read_series(report.plots["parallel_trends.svg"])
    for name, mask in (("treated", panel.treated_row), ("control", ~panel.treated_row)):
        xs, ys = drawn[name]
        assert xs == list(panel.periods)
        for t, y in zip(xs, ys):
            rows = [panel.outcome[i] for i in range(panel.n_obs) if mask[i] and panel.time[i] == t]
            assert y == pytest.approx(sum(rows) / len(rows), rel=1e-15)


def test_education_break():
    panel, _, report = _audit("education-its-2.2")
    f = report.finding("outcome-consistency")
    assert f.status is Status.STOP
    assert f.evidence["break_p"] < 0.01
    assert report.gate == BLOCKED


def test_break_test_size_on_null():
    spec = scenario("pretrend-null")
    rejections = sum(control_break_test(generate(spec, seed=50_000 + s)[0])[1] < 0.01 for s in range(1000))
    assert 0.0 <= rejections / 1000 <= 0.02


def test_overlap_separation_is_unverifiable():
    x = np.array([0.0, 0.1, 0.2, 1.0, 1.1, 1.2])
    panel = make_panel(np.zeros((6, 3)), [1, 1, 1, None, None, None][::-1], covariates={"z": x})
    res = diag_overlap(panel, builtin_contract("PSM"))
    assert res.status is Status.UNVERIFIABLE and res.reason == "separation"


def test_declined_attestation_blocks_stop_policy():
    spec = scenario("pay-equity-2.1")
    panel, _ = generate(spec)
    answers = default_attestations(spec) | {"construct-comparability": "declined", "observables": "yes"}
    report = run_audit(panel, builtin_contract("PSM"), answers)
    f = report.finding("construct-comparability")
    assert f.status is Status.UNVERIFIABLE and f.reason == "declined"
    assert report.gate == BLOCKED


_status = st.sampled_from(list(Status))
_policy = st.sampled_from(["stop", "flag", "branch:DiDStaggered"])
_finding = st.builds(lambda i, s, p: AuditFinding(f"r{i}", s, p, ""), st.integers(0, 50), _status, _policy)


@settings(max_examples=200, deadline=None)
@given(st.lists(_finding, max_size=12), _policy)
def test_gate_monotonicity(findings, policy):
    before = compute_gate(findings)
    with_stop = findings + [AuditFinding("extra", Status.STOP, policy, "")]
    assert compute_gate(with_stop) == BLOCKED
    without_pass = [f for f in findings if f.status is not Status.PASS]
    assert compute_gate(without_pass) == before


@pytest.mark.parametrize("name", ["health-plan-2.1", "clean-2x2", "saas-forking-2.3"])
def test_report_round_trip_and_determinism(name):
    _, _, a = _audit(name)
    _, _, b = _audit(name)
    data = serialize_report(a)
    assert data == serialize_report(b)
    back = parse_report(data)
    assert back == a
    assert serialize_report(back) == data
    assert a.digest() == back.digest()


def test_metrics_from_report():
    _, _, report = _audit("clean-2x2")
    m = audit_metrics(report)
    assert m["preperiods.count"] == 4
    assert 0 <= m["pretrend.p"] <= 1
    assert "pretrend.leads_p" in m
    assert "overlap.off_support_share" not in m


def test_attestations_file_round_trip():
    answers = {"observables": "yes", "construct-comparability": "no"}
    assert parse_attestations(serialize_attestations(answers)) == answers
