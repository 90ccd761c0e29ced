"""Least squares, sandwich covariances, logistic regression and Wald tests.

Every estimate and diagnostic in the package goes through these functions, so
they are deliberately small and checked against brute-force oracles in the
test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
from scipy import stats

from .errors import NoVariation, NumericsError, RankDeficient, Separation, SingleCluster, SingularBlock

RANK_TOL = 1e-10
SCORE_TOL = 1e-8
MAX_IRLS_ITER = 100
SEPARATION_NORM = 30.0
WITHIN_THRESHOLD_UNITS = 1000


@dataclass(frozen=True)
class FitResult:
    coefficients: np.ndarray
    covariance: np.ndarray
    residuals: np.ndarray
    dof: int
    bread: np.ndarray = field(repr=False)  # (X'X)^-1, or (X'WX)^-1 for logistic fits
    log_likelihood: tuple[float, ...] = ()

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def with_covariance(self, cov: np.ndarray) -> "FitResult":
        return replace(self, covariance=cov)


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    p_value: float
    df: int


def _qr_solve(design: np.ndarray, response: np.ndarray):
    x = np.asarray(design, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("design must be a matrix")
    n, k = x.shape
    if n < k:
        raise RankDeficient(range(n, k))
    q, r, piv = sla.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = RANK_TOL * max(np.linalg.norm(x), np.finfo(float).tiny)
    rank = int(np.sum(diag > tol))
    if rank < k:
        raise RankDeficient(sorted(piv[rank:]))
    beta_p = sla.solve_triangular(r, q.T @ y)
    r_inv = sla.solve_triangular(r, np.eye(k))
    bread_p = r_inv @ r_inv.T
    inv = np.empty(k, dtype=np.int64)
    inv[piv] = np.arange(k)
    beta = beta_p[inv]
    bread = bread_p[np.ix_(inv, inv)]
    return beta, bread


def least_squares(design: np.ndarray, response: np.ndarray) -> FitResult:
    """Ordinary least squares by column-pivoted QR.

    Raises ``RankDeficient`` naming the columns found to be collinear with
    earlier ones. The covariance is the classical ``s^2 (X'X)^-1``.
    """
    x = np.asarray(design, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    beta, bread = _qr_solve(x, y)
    resid = y - x @ beta
    dof = x.shape[0] - x.shape[1]
    s2 = float(resid @ resid) / max(dof, 1)
    cov = s2 * bread
    return FitResult(beta, (cov + cov.T) / 2, resid, dof, bread)


def hetero_robust_cov(fit: FitResult, design: np.ndarray, absorbed: int = 0) -> np.ndarray:
    """HC1: ``n/(n-k) * B (sum e_i^2 x_i x_i') B``."""
    x = np.asarray(design, dtype=np.float64)
    n, k = x.shape
    k += absorbed
    scores = x * fit.residuals[:, None]
    meat = scores.T @ scores
    cov = fit.bread @ meat @ fit.bread * (n / (n - k))
    return (cov + cov.T) / 2


def cluster_robust_cov(fit: FitResult, design: np.ndarray, clusters, absorbed: int = 0) -> np.ndarray:
    """CR1 sandwich with factor ``G/(G-1) * (N-1)/(N-K)``.

    ``absorbed`` counts parameters swept out before the fit (fixed effects
    removed by demeaning) so that K matches the dummy-variable regression.
    """
    x = np.asarray(design, dtype=np.float64)
    n, k = x.shape
    labels, inverse = np.unique(np.asarray(clusters), return_inverse=True)
    g = labels.size
    if g < 2:
        raise SingleCluster("cluster-robust covariance needs at least two clusters")
    if inverse.size != n:
        raise ValueError("one cluster label per row required")
    scores = x * fit.residuals[:, None]
    summed = np.zeros((g, k))
    for j in range(k):
        summed[:, j] = np.bincount(inverse, weights=scores[:, j], minlength=g)
    meat = summed.T @ summed
    kk = k + absorbed
    factor = g / (g - 1) * (n - 1) / (n - kk)
    cov = fit.bread @ meat @ fit.bread * factor
    return (cov + cov.T) / 2


def n_clusters(clusters) -> int:
    return int(np.unique(np.asarray(clusters)).size)


def _loglik(eta: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def logistic_fit(design: np.ndarray, labels: np.ndarray, max_iter: int = MAX_IRLS_ITER, tol: float = SCORE_TOL) -> FitResult:
    """Logistic regression by IRLS with step halving.

    Each accepted step does not decrease the log-likelihood; the path is
    returned in ``log_likelihood``. Coefficient norms beyond 30 are treated as
    separation.
    """
    x = np.asarray(design, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if y.min() == y.max():
        raise NoVariation("labels take a single value")
    n, k = x.shape
    beta = np.zeros(k)
    eta = x @ beta
    ll = _loglik(eta, y)
    path = [ll]
    converged = False
    for _ in range(max_iter):
        p = 1.0 / (1.0 + np.exp(-eta))
        score = x.T @ (y - p)
        if np.linalg.norm(score) < tol:
            converged = True
            break
        w = p * (1.0 - p)
        info = x.T @ (x * w[:, None])
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise Separation("information matrix singular; fitted probabilities saturated") from None
        scale = 1.0
        for _ in range(60):
            cand = beta + scale * step
            cand_eta = x @ cand
            cand_ll = _loglik(cand_eta, y)
            if cand_ll >= ll:
                break
            scale /= 2.0
        else:
            # no ascent possible at machine precision: we are at the optimum
            converged = np.linalg.norm(score) < np.sqrt(tol)
            break
        beta, eta, ll = cand, cand_eta, cand_ll
        path.append(ll)
        if np.linalg.norm(beta) > SEPARATION_NORM:
            raise Separation(f"coefficient norm {np.linalg.norm(beta):.1f} exceeds {SEPARATION_NORM}")
    if not converged:
        raise NumericsError(f"IRLS did not converge in {max_iter} iterations")
    p = 1.0 / (1.0 + np.exp(-eta))
    w = p * (1.0 - p)
    info = x.T @ (x * w[:, None])
    bread = np.linalg.inv(info)
    bread = (bread + bread.T) / 2
    return FitResult(beta, bread, y - p, n - k, bread, tuple(path))


def logistic_score(design: np.ndarray, labels: np.ndarray, beta: np.ndarray) -> np.ndarray:
    x = np.asarray(design, dtype=np.float64)
    p = 1.0 / (1.0 + np.exp(-(x @ beta)))
    return x.T @ (np.asarray(labels, dtype=np.float64) - p)


def logistic_loglik(design: np.ndarray, labels: np.ndarray, beta: np.ndarray) -> float:
    return _loglik(np.asarray(design, dtype=np.float64) @ beta, np.asarray(labels, dtype=np.float64))


def wald_test(fit: FitResult, restriction, df_denominator: int | None = None) -> WaldResult:
    """Joint test that the coefficients in ``restriction`` are all zero.

    With ``df_denominator`` the statistic is referred to F(q, df) after
    dividing by q; otherwise to chi-square(q).
    """
    idx = np.asarray(sorted(set(int(i) for i in restriction)), dtype=np.int64)
    k = fit.coefficients.size
    if idx.size == 0 or idx.min() < 0 or idx.max() >= k:
        raise IndexError(f"restriction {list(idx)} out of range for {k} coefficients")
    b = fit.coefficients[idx]
    v = fit.covariance[np.ix_(idx, idx)]
    eig = np.linalg.eigvalsh(v)
    if eig.max() <= 0 or eig.min() <= 1e-12 * eig.max():
        raise SingularBlock(f"covariance block for {list(idx)} is singular")
    stat = float(b @ np.linalg.solve(v, b))
    q = int(idx.size)
    if df_denominator is None:
        p = float(stats.chi2.sf(stat, q))
    else:
        p = float(stats.f.sf(stat / q, q, df_denominator))
    return WaldResult(stat, min(max(p, 0.0), 1.0), q)


# --- two-way fixed effects ---------------------------------------------------


def demean_twoway(values: np.ndarray, unit: np.ndarray, time: np.ndarray, tol: float = 1e-13, max_iter: int = 10_000) -> np.ndarray:
    """Sweep unit and time means out of each column by alternating projections.

    Balanced panels converge after one sweep; unbalanced ones iterate until the
    largest change falls below ``tol`` times the column scale.
    """
    v = np.array(values, dtype=np.float64, copy=True)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    _, ui = np.unique(unit, return_inverse=True)
    _, ti = np.unique(time, return_inverse=True)
    nu, nt = ui.max() + 1, ti.max() + 1
    cu = np.bincount(ui, minlength=nu).astype(float)
    ct = np.bincount(ti, minlength=nt).astype(float)
    scale = max(np.abs(v).max(), 1.0)
    for _ in range(max_iter):
        before = v.copy()
        for j in range(v.shape[1]):
            v[:, j] -= (np.bincount(ui, weights=v[:, j], minlength=nu) / cu)[ui]
            v[:, j] -= (np.bincount(ti, weights=v[:, j], minlength=nt) / ct)[ti]
        if np.abs(v - before).max() <= tol * scale:
            break
    else:
        raise NumericsError("two-way demeaning did not converge")
    return v[:, 0] if squeeze else v


def fe_dummies(unit: np.ndarray, time: np.ndarray) -> np.ndarray:
    """Unit dummies (all) and time dummies (first period dropped)."""
    _, ui = np.unique(unit, return_inverse=True)
    _, ti = np.unique(time, return_inverse=True)
    n = ui.size
    d_u = np.zeros((n, ui.max() + 1))
    d_u[np.arange(n), ui] = 1.0
    d_t = np.zeros((n, ti.max() + 1))
    d_t[np.arange(n), ti] = 1.0
    return np.hstack([d_u, d_t[:, 1:]])


def twfe_fit(design: np.ndarray, response: np.ndarray, unit, time, clusters=None, method: str = "auto") -> tuple[FitResult, int]:
    """Regress ``response`` on ``design`` with unit and time fixed effects.

    Parameters
    ----------
    design : (n, k) array
        Regressors of interest, no intercept.
    method : {"auto", "within", "dummies"}
        "auto" uses dummy expansion up to 1,000 units and within-demeaning above.

    Returns
    -------
    fit, absorbed
        ``fit`` covers only the ``k`` regressors; its covariance is
        cluster-robust (CR1) when ``clusters`` is given, else classical.
        ``absorbed`` is the number of fixed-effect parameters.
    """
    x = np.asarray(design, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    k = x.shape[1]
    n_units = np.unique(unit).size
    n_times = np.unique(time).size
    absorbed = n_units + n_times - 1
    if method == "auto":
        method = "within" if n_units > WITHIN_THRESHOLD_UNITS else "dummies"
    if method == "within":
        both = demean_twoway(np.column_stack([x, y]), unit, time)
        xd, yd = both[:, :k], both[:, k]
        fit = least_squares(xd, yd)
        dof = y.size - k - absorbed
        s2 = float(fit.residuals @ fit.residuals) / max(dof, 1)
        fit = replace(fit, dof=dof, covariance=s2 * fit.bread)
        if clusters is not None:
            fit = fit.with_covariance(cluster_robust_cov(fit, xd, clusters, absorbed=absorbed))
        return fit, absorbed
    if method != "dummies":
        raise ValueError(f"unknown fixed-effects method {method!r}")
    full_x = np.hstack([x, fe_dummies(unit, time)])
    full = least_squares(full_x, y)
    cov = cluster_robust_cov(full, full_x, clusters) if clusters is not None else full.covariance
    fit = FitResult(
        full.coefficients[:k],
        cov[:k, :k],
        full.residuals,
        full.dof,
        full.bread[:k, :k],
    )
    return fit, absorbed
