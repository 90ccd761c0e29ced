"""Synthetic panels with known identification status.

Outcome model, for unit ``i`` in group ``G`` at period ``t``::

    y_it = baseline + a_i + slope_G * t + effect_i(t) + violation_it + e_it

with ``a_i ~ N(0, unit_sd^2)`` and ``e_it ~ N(0, noise_sd^2)`` drawn from the
package's keyed xoshiro256** streams, so each cell's draw depends only on
``(seed, stream, unit, period)``. Violation magnitudes are in noise-sd units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import special

from . import kvfile, rng
from .contract import MethodKind, builtin_contract, serialize_contract
from .errors import InvalidSpec
from .panel import Panel, ProvenanceRecord, export_csv, serialize_schema

VIOLATIONS = {
    "none": (),
    "diverging_pretrends": ("gap",),
    "instrument_change": ("shift",),
    "aggregation_compression": ("factor",),
    "support_failure": ("share",),
    "staggered_heterogeneous": (),
    "aggregation_mismatch": ("offset",),
}


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    units: int
    periods: int
    adoption_plan: Mapping[str, int]  # cohort -> adoption period
    cohort_sizes: Mapping[str, int]  # remaining units are never treated
    true_effects: Mapping[str, float]
    pre_trend_slopes: tuple[float, float] = (0.0, 0.0)  # (treated, control)
    noise_sd: float = 1.0
    violation: str = "none"
    violation_params: Mapping[str, float] = field(default_factory=dict)
    seed: int = 1
    method: str = "DiD2x2"
    baseline: float = 10.0
    unit_sd: float = 1.0
    numeric_covariates: tuple[str, ...] = ()
    categorical: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    effect_scope: tuple[str, tuple[str, ...]] | None = None  # (categorical covariate, levels receiving the effect)
    effect_duration: int | None = None  # post periods the effect lasts
    producer: str = "synthgen"
    transformations: tuple[str, ...] = ()
    documentation_present: bool = True
    aggregation_grain: str = "unit-period"
    source_mix: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: {"treated": ("primary-source",), "control": ("primary-source",)}
    )
    attestations: Mapping[str, str] = field(default_factory=dict)
    expected_findings: Mapping[str, str] = field(default_factory=dict)
    detectable: bool = True

    def validate(self) -> None:
        problems = []
        if self.units < 4:
            problems.append("units must be >= 4")
        if self.periods < 4:
            problems.append("periods must be >= 4")
        if not self.noise_sd > 0:
            problems.append("noise_sd must be > 0")
        if self.violation not in VIOLATIONS:
            problems.append(f"unknown violation {self.violation!r}")
        else:
            want = set(VIOLATIONS[self.violation])
            if set(self.violation_params) != want:
                problems.append(f"violation {self.violation} takes parameters {sorted(want)}, got {sorted(self.violation_params)}")
        if set(self.adoption_plan) != set(self.cohort_sizes) or set(self.adoption_plan) != set(self.true_effects):
            problems.append("adoption_plan, cohort_sizes and true_effects must name the same cohorts")
        if sum(self.cohort_sizes.values()) > self.units:
            problems.append("cohort sizes exceed the unit count")
        for g, t in self.adoption_plan.items():
            if not 0 <= t < self.periods:
                problems.append(f"cohort {g} adopts off the grid at {t}")
        if self.effect_scope is not None and self.effect_scope[0] not in self.categorical:
            problems.append("effect_scope must name a categorical covariate")
        if problems:
            raise InvalidSpec("; ".join(problems))


@dataclass(frozen=True)
class GroundTruth:
    scenario: str
    seed: int
    true_att: float
    cohort_effects: Mapping[int, float]  # adoption period -> effect
    cohort_sizes: Mapping[int, int]
    pretrend_slope_gap: float
    expected_findings: Mapping[str, str]
    detectable: bool

    def serialize(self) -> bytes:
        head = [
            ("scenario", self.scenario),
            ("seed", str(self.seed)),
            ("true_att", kvfile.format_number(float(self.true_att))),
            ("pretrend_slope_gap", kvfile.format_number(float(self.pretrend_slope_gap))),
            ("detectable", "true" if self.detectable else "false"),
        ]
        cohorts = [(str(g), kvfile.format_number(float(e))) for g, e in sorted(self.cohort_effects.items())]
        sizes = [(str(g), str(n)) for g, n in sorted(self.cohort_sizes.items())]
        expected = sorted(self.expected_findings.items())
        sections = [("groundtruth", head), ("cohort_effects", cohorts), ("cohort_sizes", sizes)]
        if expected:
            sections.append(("expected_findings", expected))
        return kvfile.render(sections)


def _quantile_column(n: int, offset: float = 0.0) -> np.ndarray:
    """Deterministic normal-quantile design: mean exactly symmetric around ``offset``."""
    if n == 0:
        return np.zeros(0)
    p = (np.arange(n) + 0.5) / n
    return offset + math.sqrt(2.0) * special.erfinv(2.0 * p - 1.0)


def generate(spec: ScenarioSpec, seed: int | None = None) -> tuple[Panel, GroundTruth]:
    if seed is not None:
        spec = replace(spec, seed=seed)
    spec.validate()
    n, T, sd = spec.units, spec.periods, spec.noise_sd
    unit_ids = [f"u{i:03d}" for i in range(n)]
    cohorts = sorted(spec.adoption_plan, key=lambda g: (spec.adoption_plan[g], g))
    adoption: list[int | None] = [None] * n
    effect_of = np.zeros(n)
    pos = 0
    for g in cohorts:
        for _ in range(spec.cohort_sizes[g]):
            adoption[pos] = spec.adoption_plan[g]
            effect_of[pos] = spec.true_effects[g]
            pos += 1
    treated = np.array([a is not None for a in adoption])
    adopt = np.array([np.inf if a is None else a for a in adoption])

    units = np.arange(n)
    periods = np.arange(T)
    intercept = spec.unit_sd * rng.normal_grid(spec.seed, rng.INTERCEPT, units, np.zeros(1, dtype=np.int64))[:, 0]
    noise = sd * rng.normal_grid(spec.seed, rng.NOISE, units, periods)

    # covariates: time-invariant, quantile design within each group
    unit_cov: dict[str, np.ndarray] = {}
    for k, name in enumerate(spec.numeric_covariates):
        col = np.zeros(n)
        col[treated] = _quantile_column(int(treated.sum()))
        col[~treated] = _quantile_column(int((~treated).sum()))
        if spec.violation == "support_failure" and k == 0:
            idx = np.flatnonzero(treated)
            m = int(round(spec.violation_params["share"] * idx.size))
            draws = rng.normal_grid(spec.seed, rng.COVARIATE, idx[:m], np.zeros(1, dtype=np.int64))[:, 0]
            col[idx[:m]] = 5.0 + 0.5 * draws
        unit_cov[name] = col
    for name, levels in spec.categorical.items():
        lab = np.empty(n, dtype=object)
        for grp in (treated, ~treated):
            idx = np.flatnonzero(grp)
            lab[idx] = [levels[j % len(levels)] for j in range(idx.size)]
        unit_cov[name] = lab.astype(str)
    t_grid = np.broadcast_to(periods[None, :], (n, T)).astype(float)
    slope = np.where(treated, spec.pre_trend_slopes[0], spec.pre_trend_slopes[1])
    y = spec.baseline + intercept[:, None] + slope[:, None] * t_grid + noise
    post = t_grid >= adopt[:, None]
    active = post.copy()
    if spec.effect_duration is not None:
        active &= t_grid < adopt[:, None] + spec.effect_duration
    scope = np.ones(n, dtype=bool)
    if spec.effect_scope is not None:
        cov, levels = spec.effect_scope
        scope = np.isin(unit_cov[cov], list(levels))
    y = y + (effect_of * scope)[:, None] * active

    gap = 0.0
    v = spec.violation
    params = spec.violation_params
    if v == "diverging_pretrends":
        gap = params["gap"] * sd
        y = y + np.where(treated, gap, 0.0)[:, None] * t_grid
    elif v == "instrument_change":
        start = float(np.min(adopt)) if treated.any() else T // 2
        y = y + params["shift"] * sd * (t_grid >= start)
    elif v == "aggregation_compression":
        # from the earliest adoption on, values are reported as block means of
        # `factor` units within each group, collapsing the outcome's support
        factor = int(params["factor"])
        start = int(np.min(adopt))
        rank = np.zeros(n, dtype=np.int64)
        for grp in (treated, ~treated):
            rank[grp] = np.arange(int(grp.sum()))
        block = 2 * (rank // factor) + treated
        for b in np.unique(block):
            members = block == b
            y[members, start:] = y[members, start:].mean(axis=0)
    elif v == "aggregation_mismatch":
        y = y + np.where(treated, params["offset"] * sd, 0.0)[:, None]

    unit_idx = np.repeat(units, T)
    panel = Panel(
        unit_ids,
        unit_idx,
        np.tile(periods, n),
        y.ravel(),
        adoption,
        {name: col[unit_idx] for name, col in unit_cov.items()},
        dict(spec.categorical),
        tuple(range(T)),
        "period",
        ProvenanceRecord(
            spec.producer,
            tuple(spec.transformations),
            spec.documentation_present,
            spec.aggregation_grain,
            {k: tuple(v) for k, v in spec.source_mix.items()},
        ),
    )
    sizes = {spec.adoption_plan[g]: 0 for g in cohorts}
    effects = {}
    for g in cohorts:
        sizes[spec.adoption_plan[g]] += spec.cohort_sizes[g]
        effects[spec.adoption_plan[g]] = spec.true_effects[g]
    total = sum(sizes.values())
    true_att = sum(sizes[g] * effects[g] for g in sizes) / total if total else 0.0
    truth = GroundTruth(
        spec.name,
        spec.seed,
        float(true_att),
        effects,
        sizes,
        gap,
        dict(spec.expected_findings),
        spec.detectable,
    )
    return panel, truth


def _spec(name, **kw) -> ScenarioSpec:
    return ScenarioSpec(name=name, **kw)


def scenario_catalog() -> list[ScenarioSpec]:
    return [
        _spec(
            "clean-2x2",
            units=40,
            periods=8,
            adoption_plan={"g4": 4},
            cohort_sizes={"g4": 20},
            true_effects={"g4": 2.0},
            pre_trend_slopes=(0.2, 0.2),
            seed=101,
            numeric_covariates=("tenure",),
            categorical={"region": ("north", "south")},
        ),
        _spec(
            "pretrend-null",
            units=20,
            periods=8,
            adoption_plan={"g4": 4},
            cohort_sizes={"g4": 10},
            true_effects={"g4": 0.0},
            pre_trend_slopes=(0.1, 0.1),
            seed=202,
        ),
        _spec(
            "diverging-pretrends",
            units=20,
            periods=8,
            adoption_plan={"g4": 4},
            cohort_sizes={"g4": 10},
            true_effects={"g4": 0.0},
            pre_trend_slopes=(0.1, 0.1),
            violation="diverging_pretrends",
            violation_params={"gap": 0.5},
            seed=5,
            expected_findings={"pre-trends": "Flag"},
        ),
        _spec(
            "health-plan-2.1",
            units=40,
            periods=6,
            adoption_plan={"g2": 2},
            cohort_sizes={"g2": 20},
            true_effects={"g2": -1.0},
            pre_trend_slopes=(0.1, 0.1),
            seed=404,
            transformations=("claim-line detail aggregated to member-month",),
            aggregation_grain="member-month",
            source_mix={"treated": ("plan-claims-warehouse",), "control": ("vendor-eligibility-extract",)},
            expected_findings={
                "group-definition": "Stop",
                "pre-periods": "Flag",
                "pre-trends": "Unverifiable",
                "unit-aggregation": "Flag",
            },
        ),
        _spec(
            "pay-equity-2.1",
            units=60,
            periods=4,
            adoption_plan={"g2": 2},
            cohort_sizes={"g2": 30},
            true_effects={"g2": 0.5},
            seed=505,
            method="PSM",
            numeric_covariates=("tenure_years", "performance_score"),
            categorical={"job_title": ("analyst", "associate", "manager")},
            attestations={"observables": "yes", "construct-comparability": "no"},
            expected_findings={"construct-comparability": "Stop"},
        ),
        _spec(
            "education-its-2.2",
            units=30,
            periods=12,
            adoption_plan={"g6": 6},
            cohort_sizes={"g6": 15},
            true_effects={"g6": 0.0},
            seed=606,
            method="ITS",
            violation="instrument_change",
            violation_params={"shift": 2.0},
            attestations={"concurrent-interventions": "yes"},
            expected_findings={"outcome-consistency": "Stop"},
        ),
        _spec(
            "saas-forking-2.3",
            units=80,
            periods=12,
            adoption_plan={"g6": 6},
            cohort_sizes={"g6": 40},
            true_effects={"g6": 0.8},
            seed=24,
            categorical={"channel": ("paid", "direct", "referral", "partner")},
            effect_scope=("channel", ("paid", "direct")),
            effect_duration=3,
        ),
        _spec(
            "staggered-het",
            units=60,
            periods=10,
            adoption_plan={"early": 2, "late": 6},
            cohort_sizes={"early": 25, "late": 25},
            true_effects={"early": 3.0, "late": 1.0},
            seed=808,
            method="DiDStaggered",
            violation="staggered_heterogeneous",
            attestations={"robust-estimator": "yes", "control-cohort": "never-treated"},
        ),
        _spec(
            "support-failure",
            units=60,
            periods=4,
            adoption_plan={"g2": 2},
            cohort_sizes={"g2": 30},
            true_effects={"g2": 0.0},
            seed=909,
            method="PSM",
            numeric_covariates=("risk_score",),
            violation="support_failure",
            violation_params={"share": 0.3},
            attestations={"observables": "yes", "construct-comparability": "yes"},
            expected_findings={"overlap": "Stop", "baseline-balance": "Flag"},
        ),
        _spec(
            "compression",
            units=40,
            periods=8,
            adoption_plan={"g4": 4},
            cohort_sizes={"g4": 20},
            true_effects={"g4": 1.0},
            seed=1001,
            violation="aggregation_compression",
            violation_params={"factor": 4},
            expected_findings={"outcome-integrity": "Flag"},
        ),
        _spec(
            "aggregation-mismatch",
            units=40,
            periods=8,
            adoption_plan={"g4": 4},
            cohort_sizes={"g4": 20},
            true_effects={"g4": 1.0},
            seed=1101,
            violation="aggregation_mismatch",
            violation_params={"offset": 1.5},
            detectable=False,
        ),
    ]


# The specification search replayed against `saas-forking-2.3`: each step
# narrows the sample toward where the effect lives, so p-values fall in order.
FORKING_SEQUENCE: tuple[tuple[str, dict], ...] = (
    ("intent-to-treat", {"estimator": "DiD2x2"}),
    ("paid-cohort", {"estimator": "DiD2x2", "sample_filter": "channel == paid"}),
    ("channel-excluded", {"estimator": "DiD2x2", "sample_filter": "channel != referral"}),
    ("six-period-window", {"estimator": "DiD2x2", "sample_filter": "channel != referral", "outcome_window": (3, 8)}),
)


def scenario(name: str) -> ScenarioSpec:
    for s in scenario_catalog():
        if s.name == name:
            return s
    raise InvalidSpec(f"no scenario named {name!r}; known: {', '.join(s.name for s in scenario_catalog())}")


def default_attestations(spec: ScenarioSpec) -> dict[str, str]:
    """Answers for every attested item in the scenario's builtin contract."""
    answers = {
        "robust-estimator": "yes",
        "control-cohort": "never-treated",
        "observables": "yes",
        "construct-comparability": "yes",
        "concurrent-interventions": "yes",
    }
    contract = builtin_contract(spec.method)
    out = {r.id: answers.get(r.id, "yes") for r in contract.requirements if not r.binding.automatic}
    out.update(spec.attestations)
    return out


def serialize_attestations(answers: Mapping[str, str]) -> bytes:
    return kvfile.render([("attestations", sorted(answers.items()))])


def export(spec: ScenarioSpec, out_dir: str | Path, seed: int | None = None) -> dict[str, Path]:
    """Write the CSV, schema, attestations, contract and ground-truth files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    panel, truth = generate(spec, seed)
    files = {
        "panel": out / "panel.csv",
        "schema": out / "panel.acxschema",
        "attestations": out / "attestations.acx",
        "contract": out / "contract.acx",
        "groundtruth": out / "groundtruth.acx",
    }
    files["panel"].write_bytes(export_csv(panel))
    files["schema"].write_bytes(serialize_schema(panel.schema()))
    files["attestations"].write_bytes(serialize_attestations(default_attestations(spec)))
    files["contract"].write_bytes(serialize_contract(builtin_contract(MethodKind(spec.method))))
    files["groundtruth"].write_bytes(truth.serialize())
    return files
