"""Causal estimators: 2x2 DiD, TWFE (event study and static), group-time ATT, segmented ITS.

Estimators never look at audit outcomes; gating happens in the report layer.
Confidence intervals use the normal convention ``effect +/- 1.96 se`` and
p-values are two-sided normal throughout.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import stats

from . import kvfile, rng
from .errors import CohortTooSmall, EmptyCell, EstimationError, NoControlUnits, TooFewPeriods
from .numerics import cluster_robust_cov, least_squares, twfe_fit, wald_test
from .panel import Panel

Z95 = 1.96
DEFAULT_BOOTSTRAP = 199
DEFAULT_SEED = 20260101

ESTIMATORS = ("DiD2x2", "TWFE_EventStudy", "TWFE_Static", "GroupTimeATT", "ITS_Segmented")
CONTROL_NEVER = "never-treated"
CONTROL_NOT_YET = "not-yet-treated"

_CLAUSE_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(==|!=|<=|>=|<|>)\s*(.+?)\s*$")


@dataclass(frozen=True)
class FilterClause:
    name: str
    op: str
    value: str  # canonical text

    def text(self) -> str:
        return f"{self.name} {self.op} {self.value}"


def parse_filter(text: str) -> tuple[FilterClause, ...]:
    """Conjunction of ``covariate op value`` clauses joined by ``and``."""
    text = " ".join(text.split())
    if not text:
        return ()
    clauses = []
    for part in re.split(r"\s+and\s+", text):
        m = _CLAUSE_RE.match(part)
        if not m:
            raise EstimationError(f"cannot parse filter clause {part!r}")
        name, op, value = m.groups()
        value = value.strip("\"'")
        try:
            number = float(kvfile.parse_number(value))
            value = str(int(number)) if number.is_integer() else repr(number)
        except ValueError:
            pass
        clauses.append(FilterClause(name, op, value))
    return tuple(sorted(set(clauses), key=lambda c: (c.name, c.op, c.value)))


def canonical_filter(text: str) -> str:
    return " and ".join(c.text() for c in parse_filter(text))


@dataclass(frozen=True)
class SpecDescriptor:
    estimator: str
    sample_filter: str = ""
    outcome_window: tuple[int, int] | None = None
    covariates: tuple[str, ...] = ()
    control_definition: str = CONTROL_NEVER

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise EstimationError(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATORS}")
        object.__setattr__(self, "sample_filter", canonical_filter(self.sample_filter))
        object.__setattr__(self, "covariates", tuple(sorted(set(self.covariates))))
        object.__setattr__(self, "control_definition", " ".join(self.control_definition.split()))
        if self.outcome_window is not None:
            lo, hi = (int(v) for v in self.outcome_window)
            if hi < lo:
                raise EstimationError("outcome window is empty")
            object.__setattr__(self, "outcome_window", (lo, hi))

    def canonical_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "sample_filter": self.sample_filter,
            "outcome_window": list(self.outcome_window) if self.outcome_window else None,
            "covariates": list(self.covariates),
            "control_definition": self.control_definition,
        }

    def canonical_text(self) -> str:
        return kvfile.canonical_bytes(self.canonical_dict()).decode("utf-8").rstrip("\n")

    def fingerprint(self) -> str:
        return kvfile.digest(self.canonical_dict())

    @classmethod
    def from_dict(cls, d: Mapping) -> "SpecDescriptor":
        window = d.get("outcome_window")
        return cls(
            estimator=d["estimator"],
            sample_filter=d.get("sample_filter", ""),
            outcome_window=tuple(window) if window else None,
            covariates=tuple(d.get("covariates", ())),
            control_definition=d.get("control_definition", CONTROL_NEVER),
        )

    def kv_entries(self) -> list[tuple[str, str]]:
        out = [("estimator", self.estimator), ("sample_filter", self.sample_filter)]
        if self.outcome_window:
            out.append(("outcome_window", f"{self.outcome_window[0]}..{self.outcome_window[1]}"))
        out.append(("covariates", kvfile.format_list(self.covariates)))
        out.append(("control_definition", self.control_definition))
        return out

    @classmethod
    def from_kv(cls, entries: Mapping[str, str]) -> "SpecDescriptor":
        window = entries.get("outcome_window")
        win = None
        if window:
            lo, _, hi = window.partition("..")
            win = (int(lo), int(hi))
        return cls(
            estimator=entries["estimator"],
            sample_filter=entries.get("sample_filter", ""),
            outcome_window=win,
            covariates=tuple(kvfile.parse_list(entries.get("covariates", "[]"))),
            control_definition=entries.get("control_definition", CONTROL_NEVER),
        )


@dataclass(frozen=True)
class EstimateResult:
    spec: SpecDescriptor
    effect: float
    se: float
    ci95: tuple[float, float]
    p_value: float
    n_units: int
    n_obs: int
    per_period_effects: Mapping = field(default_factory=dict)
    extra: Mapping[str, float] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "spec": self.spec.canonical_dict(),
            "fingerprint": self.spec.fingerprint(),
            "effect": self.effect,
            "se": self.se,
            "ci95": list(self.ci95),
            "p_value": self.p_value,
            "n_units": self.n_units,
            "n_obs": self.n_obs,
        }


def _result(spec, effect, se, n_units, n_obs, per_period=None, extra=None) -> EstimateResult:
    effect, se = float(effect), float(se)
    p = float(2.0 * stats.norm.sf(abs(effect / se))) if se > 0 else (0.0 if effect != 0 else 1.0)
    return EstimateResult(
        spec,
        effect,
        se,
        (effect - Z95 * se, effect + Z95 * se),
        min(max(p, 0.0), 1.0),
        int(n_units),
        int(n_obs),
        per_period or {},
        extra or {},
    )


def apply_spec_sample(panel: Panel, spec: SpecDescriptor) -> Panel:
    mask = np.ones(panel.n_obs, dtype=bool)
    for clause in parse_filter(spec.sample_filter):
        if clause.name not in panel.covariates:
            raise EstimationError(f"filter references unknown covariate {clause.name!r}")
        col = panel.covariates[clause.name]
        if clause.name in panel.categorical:
            if clause.op not in ("==", "!="):
                raise EstimationError(f"categorical covariate {clause.name!r} only supports == and !=")
            hit = col == clause.value
            mask &= hit if clause.op == "==" else ~hit
        else:
            v = float(clause.value)
            mask &= {
                "==": col == v,
                "!=": col != v,
                "<": col < v,
                "<=": col <= v,
                ">": col > v,
                ">=": col >= v,
            }[clause.op]
    if spec.outcome_window is not None:
        lo, hi = spec.outcome_window
        mask &= (panel.time >= lo) & (panel.time <= hi)
    if not mask.any():
        raise EstimationError("sample filter leaves no rows")
    return panel if mask.all() else panel.select(mask)


def covariate_matrix(panel: Panel, names) -> np.ndarray:
    cols = []
    for name in names:
        if name not in panel.covariates:
            raise EstimationError(f"unknown covariate {name!r}")
        v = panel.covariates[name]
        if name in panel.categorical:
            for level in panel.categorical[name][1:]:
                cols.append((v == level).astype(float))
        else:
            cols.append(np.asarray(v, dtype=float))
    return np.column_stack(cols) if cols else np.zeros((panel.n_obs, 0))


def _single_adoption(panel: Panel) -> int:
    times = sorted({a for a in panel.adoption if a is not None})
    if not times:
        raise EmptyCell("treated")
    if len(times) > 1:
        raise EstimationError(f"single adoption time required, found {times}")
    return times[0]


def did_2x2(panel: Panel, spec: SpecDescriptor) -> EstimateResult:
    """Interaction regression ``y ~ T + Post + T:Post`` with unit-clustered SEs."""
    p = apply_spec_sample(panel, spec)
    g = _single_adoption(p)
    treated = p.treated_row.astype(float)
    post = (p.time >= g).astype(float)
    for t_val, po_val, name in ((1, 0, "treated-pre"), (1, 1, "treated-post"), (0, 0, "control-pre"), (0, 1, "control-post")):
        if not np.any((treated == t_val) & (post == po_val)):
            raise EmptyCell(name)
    x = np.column_stack([np.ones(p.n_obs), treated, post, treated * post, covariate_matrix(p, spec.covariates)])
    fit = least_squares(x, p.outcome)
    cov = cluster_robust_cov(fit, x, p.unit)
    return _result(spec, fit.coefficients[3], math.sqrt(cov[3, 3]), p.unit_count, p.n_obs)


def _event_time(p: Panel) -> np.ndarray:
    return np.where(p.treated_row, p.time - np.where(p.treated_row, p.adoption_by_row, 0), np.nan)


def twfe_event_study(panel: Panel, spec: SpecDescriptor, reference: int = -1, method: str = "auto") -> EstimateResult:
    """Lead/lag regression with unit and time fixed effects.

    ``per_period_effects`` maps event time to ``(coefficient, se)``; the
    headline effect is the mean of the lag coefficients (event time >= 0).
    ``extra`` carries the joint Wald p-values of the leads and the lags,
    referred to F(q, G-1).
    """
    p = apply_spec_sample(panel, spec)
    e = _event_time(p)
    rel = sorted({int(v) for v in e[~np.isnan(e)]})
    pre = [r for r in rel if r < 0]
    post = [r for r in rel if r >= 0]
    if len(pre) < 2 or len(post) < 2:
        raise TooFewPeriods("event study needs at least two periods on each side of adoption")
    if reference not in rel:
        raise TooFewPeriods(f"reference event time {reference} not observed")
    keep = [r for r in rel if r != reference]
    x = np.column_stack([(e == r).astype(float) for r in keep] + [covariate_matrix(p, spec.covariates)])
    fit, _ = twfe_fit(x, p.outcome, p.unit, p.time, clusters=p.unit, method=method)
    se = fit.se
    per = {r: (float(fit.coefficients[i]), float(se[i])) for i, r in enumerate(keep)}
    lag_idx = [i for i, r in enumerate(keep) if r >= 0]
    lead_idx = [i for i, r in enumerate(keep) if r < 0]
    a = np.zeros(fit.coefficients.size)
    a[lag_idx] = 1.0 / len(lag_idx)
    effect = float(a @ fit.coefficients)
    eff_se = math.sqrt(max(float(a @ fit.covariance @ a), 0.0))
    g = p.unit_count - 1
    extra = {"lags_p": wald_test(fit, lag_idx, df_denominator=g).p_value}
    if lead_idx:
        extra["leads_p"] = wald_test(fit, lead_idx, df_denominator=g).p_value
    return _result(spec, effect, eff_se, p.unit_count, p.n_obs, per, extra)


def twfe_static(panel: Panel, spec: SpecDescriptor, method: str = "auto") -> EstimateResult:
    """Single treatment coefficient on ``1[t >= adoption]`` with unit and time effects."""
    p = apply_spec_sample(panel, spec)
    d = (p.time >= p.adoption_by_row).astype(float)
    x = np.column_stack([d, covariate_matrix(p, spec.covariates)])
    fit, _ = twfe_fit(x, p.outcome, p.unit, p.time, clusters=p.unit, method=method)
    return _result(spec, fit.coefficients[0], fit.se[0], p.unit_count, p.n_obs)


def _strata(adoption: tuple) -> dict:
    out: dict = {}
    for i, a in enumerate(adoption):
        out.setdefault(a, []).append(i)
    return {k: np.asarray(v) for k, v in sorted(out.items(), key=lambda kv: (kv[0] is None, kv[0] or 0))}


def group_time_att(
    panel: Panel,
    spec: SpecDescriptor,
    n_boot: int = DEFAULT_BOOTSTRAP,
    seed: int = DEFAULT_SEED,
) -> EstimateResult:
    """Unconditional group-time ATTs against never- or not-yet-treated controls.

    Each ATT(g, t) compares the change from period g-1 to t in cohort g with
    the same change in the control set. The overall effect averages each
    cohort's post-adoption ATTs, then weights cohorts by size. Standard errors
    come from a cohort-stratified unit bootstrap; draw ``b`` of stratum ``s``
    is keyed by ``(seed, s, b)``, so results do not depend on evaluation order.
    """
    p = apply_spec_sample(panel, spec)
    not_yet = spec.control_definition == CONTROL_NOT_YET
    if spec.control_definition not in (CONTROL_NEVER, CONTROL_NOT_YET):
        raise EstimationError(f"control definition must be {CONTROL_NEVER!r} or {CONTROL_NOT_YET!r}")
    y, periods = p.wide()
    col = {t: j for j, t in enumerate(periods)}
    adopt = p.adoption_by_unit
    never = ~np.isfinite(adopt)
    # cohorts adopting after the last observed period only ever serve as controls
    cohorts = sorted({a for a in p.adoption if a is not None and a <= periods[-1]})
    if not cohorts:
        raise EmptyCell("treated")
    if not never.any() and not not_yet:
        raise NoControlUnits("no never-treated units; declare not-yet-treated controls to proceed")

    cells = []  # (g, t, member mask, control mask, base col, t col)
    sizes = {}
    for g in cohorts:
        member = adopt == g
        sizes[g] = int(member.sum())
        if sizes[g] < 2:
            raise CohortTooSmall(f"cohort {g} has {sizes[g]} unit(s); at least 2 required")
        base = g - 1
        if base not in col:
            raise TooFewPeriods(f"cohort {g} has no observed base period {base}")
        for t in periods:
            if t == base:
                continue
            if not_yet:
                control = never | (adopt > max(t, base))
                control &= ~member
            else:
                control = never
            if not control.any():
                continue
            cells.append((g, t, member, control, col[base], col[t]))

    diffs = np.column_stack([y[:, c[5]] - y[:, c[4]] for c in cells])
    valid = ~np.isnan(diffs)
    diffs = np.where(valid, diffs, 0.0)
    vf = valid.astype(float)

    def estimate(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Weighted ATT(g,t) per cell and overall; ``w`` is (draws, units)."""
        att = np.empty((w.shape[0], len(cells)))
        for j, (_, _, member, control, _, _) in enumerate(cells):
            wt = w[:, member]
            wc = w[:, control]
            mt = (wt @ diffs[member, j]) / (wt @ vf[member, j])
            mc = (wc @ diffs[control, j]) / (wc @ vf[control, j])
            att[:, j] = mt - mc
        total = sum(sizes.values())
        overall = np.zeros(w.shape[0])
        for g in cohorts:
            post = [j for j, c in enumerate(cells) if c[0] == g and c[1] >= g]
            if not post:
                raise TooFewPeriods(f"cohort {g} has no post-adoption periods")
            overall += sizes[g] / total * att[:, post].mean(axis=1)
        return att, overall

    with np.errstate(invalid="ignore", divide="ignore"):
        att0, overall0 = estimate(np.ones((1, p.unit_count)))
        if not np.all(np.isfinite(att0)):
            raise EmptyCell("a group-time cell has no observed units")
        draws = np.zeros((n_boot, p.unit_count))
        for s_index, (_, members) in enumerate(_strata(p.adoption).items()):
            idx = rng.resample_indices(rng.derive_seed(seed, s_index), n_boot, members.size)
            counts = np.zeros((n_boot, members.size))
            rows = np.repeat(np.arange(n_boot), members.size)
            np.add.at(counts, (rows, idx.ravel()), 1.0)
            draws[:, members] = counts
        att_b, overall_b = estimate(draws)
    ok = np.isfinite(overall_b)
    se = float(np.std(overall_b[ok], ddof=1)) if ok.sum() > 1 else float("nan")
    cell_se = np.nanstd(att_b, axis=0, ddof=1)
    per = {(c[0], c[1]): (float(att0[0, j]), float(cell_se[j])) for j, c in enumerate(cells)}
    extra = {f"cohort_size.{g}": float(n) for g, n in sizes.items()}
    return _result(spec, overall0[0], se, p.unit_count, p.n_obs, per, extra)


def newey_west_cov(x: np.ndarray, resid: np.ndarray, bread: np.ndarray, lags: int) -> np.ndarray:
    scores = x * resid[:, None]
    meat = scores.T @ scores
    for lag in range(1, lags + 1):
        w = 1.0 - lag / (lags + 1.0)
        gamma = scores[lag:].T @ scores[:-lag]
        meat += w * (gamma + gamma.T)
    cov = bread @ meat @ bread
    return (cov + cov.T) / 2


def its_segmented(panel: Panel, spec: SpecDescriptor) -> EstimateResult:
    """Segmented regression on the treated mean series.

    ``y_t = a + b (t - t0) + c 1[t >= t0] + d 1[t >= t0] (t - t0)``; the effect
    is the level shift ``c`` and ``extra`` carries the trend change ``d``.
    Newey-West (Bartlett) covariance with lag ``floor(T ** (1/3))``.
    """
    p = apply_spec_sample(panel, spec)
    t0 = _single_adoption(p)
    sel = p.treated_row if p.treated_row.any() else np.ones(p.n_obs, dtype=bool)
    times = p.time[sel]
    periods = np.unique(times)
    series = np.array([p.outcome[sel][times == t].mean() for t in periods])
    before, after = int((periods < t0).sum()), int((periods >= t0).sum())
    if before < 3 or after < 3:
        raise TooFewPeriods(f"need >= 3 periods each side of {t0}; have {before} before, {after} after")
    tau = (periods - t0).astype(float)
    post = (periods >= t0).astype(float)
    x = np.column_stack([np.ones(periods.size), tau, post, post * tau])
    fit = least_squares(x, series)
    lags = int(math.floor(periods.size ** (1.0 / 3.0) + 1e-12))
    cov = newey_west_cov(x, fit.residuals, fit.bread, lags)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    extra = {"trend_change": float(fit.coefficients[3]), "trend_change_se": float(se[3]), "nw_lags": float(lags)}
    return _result(spec, fit.coefficients[2], se[2], int(np.unique(p.unit[sel]).size), int(sel.sum()), extra=extra)


def run_estimator(panel: Panel, spec: SpecDescriptor, seed: int = DEFAULT_SEED, n_boot: int = DEFAULT_BOOTSTRAP) -> EstimateResult:
    if spec.estimator == "DiD2x2":
        return did_2x2(panel, spec)
    if spec.estimator == "TWFE_EventStudy":
        return twfe_event_study(panel, spec)
    if spec.estimator == "TWFE_Static":
        return twfe_static(panel, spec)
    if spec.estimator == "GroupTimeATT":
        return group_time_att(panel, spec, n_boot=n_boot, seed=seed)
    return its_segmented(panel, spec)
