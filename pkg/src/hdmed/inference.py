"""Effect estimates, plug-in covariances and the indirect/direct effect tests."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .distributions import chi2_sf
from .model import Dataset, DegenerateFitError, MediationFit, TestKind, TestReport
from .solver import PathResult, SolverConfig, _checked_qr, fit_path_select, ols

log = logging.getLogger(__name__)

COND_LIMIT = 1e12


class DegenerateVarianceError(np.linalg.LinAlgError):
    """A covariance matrix needed for inference is singular or too ill-conditioned."""


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def spd_inverse(A: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via its eigendecomposition.

    Fails instead of regularizing when the condition number exceeds 1e12.
    """
    A = _sym(np.asarray(A, dtype=float))
    vals, vecs = np.linalg.eigh(A)
    if vals[0] <= 0 or vals[-1] / vals[0] > COND_LIMIT:
        cond = np.inf if vals[0] <= 0 else vals[-1] / vals[0]
        raise DegenerateVarianceError(
            f"{what} is singular or ill-conditioned (condition number {cond:.3e}); "
            "use a smaller active set or more observations")
    return _sym((vecs / vals) @ vecs.T)


def estimate_total_effect(d: Dataset) -> tuple[np.ndarray, float]:
    """OLS of y on X; returns the coefficients and ``||y - X g||^2 / (n - q)``."""
    gamma = ols(d.y, d.X, "exposure matrix X")
    r = d.y - d.X @ gamma
    return gamma, float(r @ r) / (d.n - d.q)


@dataclass(frozen=True)
class VarianceComponents:
    Sigma_hat: np.ndarray
    Sigma_XX_hat: np.ndarray
    sigma1_sq: float
    sigma_total_sq: float
    sigma2_sq: float

    @classmethod
    def from_fit(cls, d: Dataset, active: np.ndarray, rss1: float,
                 sigma_total_sq: float) -> "VarianceComponents":
        s, q = active.size, d.q
        if d.n <= s + q:
            raise DegenerateFitError(
                f"active set of size {s} leaves no residual degrees of freedom (n={d.n}, q={q})")
        Z = np.column_stack([d.X, d.M[:, active]])
        Sigma = _sym(Z.T @ Z / d.n)
        sigma1_sq = rss1 / (d.n - s - q)
        return cls(Sigma, Sigma[:q, :q].copy(), sigma1_sq, sigma_total_sq,
                   max(sigma_total_sq - sigma1_sq, 0.0))


def variance_estimates(d: Dataset, vc: VarianceComponents) -> tuple[np.ndarray, np.ndarray]:
    """Plug-in covariance matrices of the direct and indirect effect estimates.

    ``cov(a1) = s1 * [Sigma^-1]_XX / n`` and
    ``cov(b) = {s2 * Sxx^-1 + s1 * ([Sigma^-1]_XX - Sxx^-1)} / n``.
    """
    q = d.q
    Sinv = spd_inverse(vc.Sigma_hat, "sample second-moment matrix of (X, M_A)")
    Sxx_inv = spd_inverse(vc.Sigma_XX_hat, "sample second-moment matrix of X")
    top = Sinv[:q, :q]
    cov_alpha1 = _sym(vc.sigma1_sq * top) / d.n
    cov_beta = _sym(vc.sigma2_sq * Sxx_inv + vc.sigma1_sq * (top - Sxx_inv)) / d.n
    return cov_alpha1, cov_beta


def _assemble(d: Dataset, alpha0: np.ndarray, alpha1: np.ndarray, rss1: float,
              lam: float | None, method: str, diagnostics=(),
              active: np.ndarray | None = None) -> MediationFit:
    gamma, sigma_total_sq = estimate_total_effect(d)
    if active is None:
        active = np.flatnonzero(alpha0)
    vc = VarianceComponents.from_fit(d, active, rss1, sigma_total_sq)
    cov_a1, cov_b = variance_estimates(d, vc)
    diags = list(diagnostics)
    if vc.sigma2_sq == 0.0:
        diags.append("sigma2_sq clipped at 0 (partial-fit residual variance exceeds total)")
    return MediationFit(
        alpha1_hat=alpha1, alpha0_hat=alpha0, active_set=active, gamma_hat=gamma,
        beta_hat=gamma - alpha1, sigma1_sq=vc.sigma1_sq, sigma2_sq=vc.sigma2_sq,
        sigma_total_sq=sigma_total_sq, rss1=rss1, cov_alpha1=cov_a1, cov_beta=cov_b,
        lambda_selected=lam, n=d.n, method=method, diagnostics=tuple(diags))


def fit_mediation(d: Dataset, cfg: SolverConfig | None = None,
                  path: PathResult | None = None) -> MediationFit:
    """Partial penalized fit of the outcome model plus all effect estimates."""
    cfg = cfg or SolverConfig()
    path = path or fit_path_select(d, cfg, penalize_all=False)
    sel = path.selected
    return _assemble(d, sel.alpha0, sel.alpha1, sel.rss, path.selected_lambda,
                     "penalized", path.diagnostics)


def oracle_fit(d: Dataset, true_active) -> MediationFit:
    """OLS of y on (X, M_A) for a known active set, with the same plug-in formulas."""
    A = np.unique(np.asarray(true_active, dtype=int))
    if A.size + d.q >= d.n:
        raise DegenerateFitError("oracle active set too large for the sample size")
    Z = np.column_stack([d.X, d.M[:, A]])
    coef = ols(d.y, Z, "oracle design (X, M_A)")
    alpha0 = np.zeros(d.p)
    alpha0[A] = coef[d.q:]
    r = d.y - Z @ coef
    return _assemble(d, alpha0, coef[:d.q], float(r @ r), None, "oracle", active=A)


def _tested(d: Dataset | None, q: int) -> np.ndarray:
    return d.tested_exposures if d is not None else np.arange(q)


def wald_indirect_test(fit: MediationFit, d: Dataset | None = None) -> TestReport:
    """``S_n = b' cov(b)^-1 b`` against chi2 with q degrees of freedom.

    ``cov_beta`` already carries the 1/n factor. With ``d`` given, an
    intercept column is excluded from the tested coefficients.
    """
    idx = _tested(d, fit.beta_hat.size)
    b = fit.beta_hat[idx]
    df = int(idx.size)
    if not np.any(b):
        return TestReport(TestKind.WALD_INDIRECT, 0.0, df, 1.0)
    V = fit.cov_beta[np.ix_(idx, idx)]
    try:
        Vinv = spd_inverse(V, "indirect-effect covariance")
    except DegenerateVarianceError as exc:
        raise DegenerateVarianceError(f"Wald test undefined: {exc}") from None
    stat = max(float(b @ Vinv @ b), 0.0)
    return TestReport(TestKind.WALD_INDIRECT, stat, df, chi2_sf(stat, df))


def f_statistic(rss0: float, rss1: float, n: int, q: int) -> tuple[float, tuple[str, ...]]:
    """``(RSS0 - RSS1) / (RSS1 / (n - q))``, floored at zero."""
    if rss1 <= 0:
        raise DegenerateFitError("alternative-model RSS is zero")
    t = (rss0 - rss1) / (rss1 / (n - q))
    if t < 0:
        return 0.0, (f"negative F statistic {t:.4g} floored at 0 (null fit beat the partial fit)",)
    return float(t), ()


def f_direct_test(d: Dataset, cfg: SolverConfig | None = None,
                  fit: MediationFit | None = None) -> tuple[TestReport, MediationFit]:
    """F-type test of zero direct effect.

    The null model drops the exposures (keeping an intercept when present) and
    runs its own HBIC selection. Returns the report and the partial fit with
    ``rss0`` attached.
    """
    cfg = cfg or SolverConfig()
    fit = fit or fit_mediation(d, cfg)
    null_path = fit_path_select(d, cfg, penalize_all=True)
    rss0 = null_path.selected.rss
    df = int(d.tested_exposures.size)
    stat, diags = f_statistic(rss0, fit.rss1, d.n, d.q)
    report = TestReport(TestKind.F_DIRECT, stat, df, chi2_sf(stat, df), diagnostics=diags)
    return report, replace(fit, rss0=rss0)


def oracle_f_direct_test(d: Dataset, true_active, fit: MediationFit | None = None) -> TestReport:
    """F-type test with both models fitted by OLS on the known active set."""
    A = np.unique(np.asarray(true_active, dtype=int))
    fit = fit or oracle_fit(d, A)
    null_cols = [d.M[:, A]]
    if d.include_intercept:
        null_cols.insert(0, d.X[:, [d.intercept_index]])
    Z0 = np.column_stack(null_cols) if A.size or d.include_intercept else np.empty((d.n, 0))
    if Z0.shape[1]:
        Q, _ = _checked_qr(Z0, "oracle null design")
        r0 = d.y - Q @ (Q.T @ d.y)
    else:
        r0 = d.y
    df = int(d.tested_exposures.size)
    stat, diags = f_statistic(float(r0 @ r0), fit.rss1, d.n, d.q)
    return TestReport(TestKind.F_DIRECT, stat, df, chi2_sf(stat, df), diagnostics=diags)


@dataclass(frozen=True)
class AsymptoticVariances:
    var_alpha1: np.ndarray
    var_beta: np.ndarray
    var_beta_competitor: np.ndarray
    B: np.ndarray
    B_tilde: np.ndarray


def _b_matrix(Sxx_inv, Sxm, Smm, what):
    schur = _sym(Smm - Sxm.T @ Sxx_inv @ Sxm)
    try:
        np.linalg.cholesky(schur)
    except np.linalg.LinAlgError:
        raise DegenerateVarianceError(f"{what} Schur complement is not positive definite") from None
    return _sym(Sxx_inv @ Sxm @ np.linalg.solve(schur, Sxm.T) @ Sxx_inv)


def asymptotic_variances(Sigma_XX, Sigma_XM, Sigma_MM, Sigma_XM_full, Sigma_MM_full,
                         sigma1_sq: float, sigma2_sq: float) -> AsymptoticVariances:
    """Per-observation asymptotic covariances of the direct and indirect effects.

    ``B`` uses second moments of the active mediators, ``B_tilde`` those of all
    mediators (the debiased competitor). ``Sigma_XM`` is q x s, ``Sigma_XM_full``
    q x p.
    """
    Sxx = _sym(np.atleast_2d(np.asarray(Sigma_XX, dtype=float)))
    Sxx_inv = spd_inverse(Sxx, "Sigma_XX")
    q = Sxx.shape[0]
    Sxm = np.asarray(Sigma_XM, dtype=float).reshape(q, -1)
    if Sxm.shape[1]:
        B = _b_matrix(Sxx_inv, Sxm, np.atleast_2d(Sigma_MM), "active-mediator")
    else:
        B = np.zeros((q, q))
    Sxm_full = np.asarray(Sigma_XM_full, dtype=float).reshape(q, -1)
    B_tilde = _b_matrix(Sxx_inv, Sxm_full, np.atleast_2d(Sigma_MM_full), "full-mediator")
    return AsymptoticVariances(
        var_alpha1=sigma1_sq * (Sxx_inv + B),
        var_beta=sigma2_sq * Sxx_inv + sigma1_sq * B,
        var_beta_competitor=sigma2_sq * Sxx_inv + sigma1_sq * B_tilde,
        B=B, B_tilde=B_tilde)


def mediator_standard_errors(d: Dataset, fit: MediationFit) -> np.ndarray:
    """Plug-in standard errors of the selected mediator coefficients, ordered as ``fit.active_set``."""
    A = np.asarray(fit.active_set, dtype=int)
    if A.size == 0:
        return np.zeros(0)
    Z = np.column_stack([d.X, d.M[:, A]])
    Sinv = spd_inverse(Z.T @ Z / d.n, "sample second-moment matrix of (X, M_A)")
    return np.sqrt(fit.sigma1_sq * np.diag(Sinv)[d.q:] / d.n)
