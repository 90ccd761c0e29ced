import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acx.errors import NoVariation, RankDeficient, Separation, SingleCluster, SingularBlock
from acx.numerics import (
    FitResult,
    cluster_robust_cov,
    hetero_robust_cov,
    least_squares,
    logistic_fit,
    logistic_loglik,
    logistic_score,
    twfe_fit,
    wald_test,
)

from .oracles import gradient_ascent_logit, loop_sandwich, normal_equations


def _fixture_50x3(seed=11):
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(50), rng.normal(size=50), rng.uniform(-2, 2, size=50)])
    y = x @ np.array([1.5, -0.7, 2.0]) + rng.normal(scale=0.5, size=50)
    return x, y


def test_identity_design():
    fit = least_squares(np.eye(3), np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(fit.coefficients, [1.0, 2.0, 3.0], rtol=0, atol=1e-15)
    assert fit.dof == 0


def test_least_squares_matches_normal_equations():
    x, y = _fixture_50x3()
    fit = least_squares(x, y)
    oracle = normal_equations(x, y)
    rel = np.max(np.abs(fit.coefficients - oracle) / np.abs(oracle))
    assert rel <= 1e-10


def test_duplicated_column_rank_deficient():
    x, y = _fixture_50x3()
    with pytest.raises(RankDeficient) as err:
        least_squares(np.column_stack([x, x[:, 1]]), y)
    assert len(err.value.columns) == 1
    assert err.value.columns[0] in (1, 3)


def test_cluster_robust_matches_loop_oracle():
    x, y = _fixture_50x3()
    clusters = np.repeat(np.arange(5), 10)
    fit = least_squares(x, y)
    cov = cluster_robust_cov(fit, x, clusters)
    oracle = loop_sandwich(x, y, clusters)
    assert np.max(np.abs(cov - oracle)) <= 1e-10 * np.max(np.abs(oracle))


def test_singleton_clusters_equal_hc1():
    x, y = _fixture_50x3()
    fit = least_squares(x, y)
    np.testing.assert_allclose(cluster_robust_cov(fit, x, np.arange(50)), hetero_robust_cov(fit, x), rtol=1e-12)


def test_single_cluster_rejected():
    x, y = _fixture_50x3()
    with pytest.raises(SingleCluster):
        cluster_robust_cov(least_squares(x, y), x, np.zeros(50))


def test_covariances_are_psd():
    x, y = _fixture_50x3()
    fit = least_squares(x, y)
    for cov in (fit.covariance, hetero_robust_cov(fit, x), cluster_robust_cov(fit, x, np.arange(50) % 7)):
        np.testing.assert_allclose(cov, cov.T, rtol=0, atol=1e-14)
        assert np.linalg.eigvalsh(cov).min() >= -1e-8 * np.trace(cov)


@settings(max_examples=40, deadline=None)
@given(c=st.floats(-1e3, 1e3), k=st.floats(0.01, 100))
def test_affine_equivariance(c, k):
    x, y = _fixture_50x3()
    clusters = np.arange(50) % 5
    base = least_squares(x, y)
    shifted = least_squares(x, y + c)
    np.testing.assert_allclose(shifted.coefficients[1:], base.coefficients[1:], rtol=1e-9, atol=1e-9)
    assert shifted.coefficients[0] == pytest.approx(base.coefficients[0] + c, rel=1e-9, abs=1e-9)
    scaled = least_squares(x, k * y)
    np.testing.assert_allclose(scaled.coefficients, k * base.coefficients, rtol=1e-9)
    se_b = np.sqrt(np.diag(cluster_robust_cov(base, x, clusters)))
    se_s = np.sqrt(np.diag(cluster_robust_cov(scaled, x, clusters)))
    np.testing.assert_allclose(se_s, k * se_b, rtol=1e-9)


def _logit_fixture(n=200, seed=3):
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), rng.normal(size=n), rng.binomial(1, 0.4, size=n)])
    eta = x @ np.array([-0.3, 0.8, -0.5])
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-eta))).astype(float)
    return x, y


def test_logistic_intercept_only_symmetric():
    y = np.array([1.0, 0.0] * 10)
    fit = logistic_fit(np.ones((20, 1)), y)
    assert fit.coefficients[0] == pytest.approx(0.0, abs=1e-12)


def test_logistic_matches_gradient_ascent():
    x, y = _logit_fixture()
    fit = logistic_fit(x, y)
    oracle = gradient_ascent_logit(x, y)
    assert np.max(np.abs(fit.coefficients - oracle)) <= 1e-6
    assert np.linalg.norm(logistic_score(x, y, fit.coefficients)) < 1e-8


def test_logistic_monotone_ascent():
    x, y = _logit_fixture(seed=8)
    path = logistic_fit(x, y).log_likelihood
    assert len(path) >= 2
    assert all(b >= a for a, b in zip(path, path[1:]))


def test_logistic_score_matches_finite_differences():
    x, y = _logit_fixture(seed=5)
    beta = logistic_fit(x, y).coefficients + np.array([0.05, -0.1, 0.2])  # away from zero score
    h = 1e-5
    fd = np.array(
        [
            (logistic_loglik(x, y, beta + h * e) - logistic_loglik(x, y, beta - h * e)) / (2 * h)
            for e in np.eye(beta.size)
        ]
    )
    np.testing.assert_allclose(logistic_score(x, y, beta), fd, atol=1e-5)


def test_logistic_at_optimum_fd_score_zero():
    x, y = _logit_fixture(seed=6)
    beta = logistic_fit(x, y).coefficients
    h = 1e-5
    fd = [(logistic_loglik(x, y, beta + h * e) - logistic_loglik(x, y, beta - h * e)) / (2 * h) for e in np.eye(3)]
    assert np.max(np.abs(fd)) < 1e-5


def test_logistic_separation():
    z = np.linspace(-1, 1, 40)
    x = np.column_stack([np.ones(40), z])
    with pytest.raises(Separation):
        logistic_fit(x, (z > 0).astype(float))


def test_logistic_no_variation():
    with pytest.raises(NoVariation):
        logistic_fit(np.ones((5, 1)), np.ones(5))


def _fit(b, v):
    b = np.asarray(b, dtype=float)
    v = np.asarray(v, dtype=float)
    return FitResult(b, v, np.zeros(3), 10, v)


def test_wald_zero_coefficients():
    res = wald_test(_fit([0.0, 0.0], np.eye(2)), [0, 1])
    assert res.statistic == 0.0 and res.p_value == 1.0


def test_wald_scalar_closed_form():
    res = wald_test(_fit([2.0], [[1.0]]), [0])
    assert res.statistic == pytest.approx(4.0, rel=1e-15)
    # P(chi2_1 > 4) = P(|Z| > 2) = erfc(sqrt(2))
    assert res.p_value == pytest.approx(math.erfc(math.sqrt(2.0)), rel=1e-12)


def test_wald_singular_block():
    with pytest.raises(SingularBlock):
        wald_test(_fit([1.0, 1.0], [[1.0, 1.0], [1.0, 1.0]]), [0, 1])


def _twfe_fixture(units=20, periods=6, seed=4):
    rng = np.random.default_rng(seed)
    unit = np.repeat(np.arange(units), periods)
    time = np.tile(np.arange(periods), units)
    d = ((unit < units // 2) & (time >= 3)).astype(float)
    z = rng.normal(size=unit.size)
    y = rng.normal(size=units)[unit] + 0.3 * time + 1.7 * d + 0.4 * z + rng.normal(size=unit.size)
    return np.column_stack([d, z]), y, unit, time


def test_within_equals_dummy_expansion():
    x, y, unit, time = _twfe_fixture()
    within, _ = twfe_fit(x, y, unit, time, clusters=unit, method="within")
    dummies, _ = twfe_fit(x, y, unit, time, clusters=unit, method="dummies")
    assert np.max(np.abs(within.coefficients - dummies.coefficients)) <= 1e-9
    assert np.max(np.abs(within.covariance - dummies.covariance)) <= 1e-9


def test_within_equals_dummies_unbalanced():
    x, y, unit, time = _twfe_fixture(seed=9)
    keep = np.ones(unit.size, dtype=bool)
    keep[[3, 17, 40, 41, 88]] = False
    within, _ = twfe_fit(x[keep], y[keep], unit[keep], time[keep], clusters=unit[keep], method="within")
    dummies, _ = twfe_fit(x[keep], y[keep], unit[keep], time[keep], clusters=unit[keep], method="dummies")
    assert np.max(np.abs(within.coefficients - dummies.coefficients)) <= 1e-9
