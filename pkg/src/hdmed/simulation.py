"""Monte Carlo designs for the mediation model, replication engine and summaries.

Design (per replication): x ~ N(0, I_q), m = Gamma' x + e with e ~ N(0, AR(rho)),
y = alpha0' m + c2 * 1_q' x + e1. Gamma rows are c1 * (0.2, 0.4, 0.6, 0.8, 1.0,
N(0, 0.1^2) tail) and alpha0 = (1, 0.8, 0.6, 0.4, 0.2, 0, ..., 0), so the true
indirect effect is 1.4 * c1. e1 is N(0, 0.5^2) or t_6 / sqrt(6).
"""

from __future__ import annotations

import enum
import functools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from .distributions import chi2_power, chi2_ppf
from .inference import (AsymptoticVariances, asymptotic_variances, f_direct_test,
                        fit_mediation, oracle_f_direct_test, oracle_fit, wald_indirect_test)
from .model import Dataset, TestKind, standardize_mediators, validate_dataset
from .solver import (ProfiledProblem, SolverConfig, fit_path_select, scad_derivative,
                     unpenalized_block)

log = logging.getLogger(__name__)

ALPHA0_HEAD = np.array([1.0, 0.8, 0.6, 0.4, 0.2])
TAU_HEAD = 0.2 * np.arange(1, 6)
ERROR_SD = 0.5
METHODS = ("penalized", "oracle")


class ErrorLaw(str, enum.Enum):
    GAUSSIAN = "gaussian"
    SCALED_T6 = "t6"


@dataclass(frozen=True)
class SimConfig:
    n: int = 300
    p: int = 500
    q: int = 1
    rho: float = 0.5
    c1: float = 0.0
    c2: float = 0.0
    error_law: ErrorLaw = ErrorLaw.GAUSSIAN
    n_reps: int = 500
    seed: int = 20220101
    alpha_level: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "error_law", ErrorLaw(self.error_law))
        if not abs(self.rho) < 1:
            raise ValueError("rho must satisfy |rho| < 1")
        if self.n_reps < 1:
            raise ValueError("n_reps must be >= 1")
        if not 0 < self.alpha_level < 1:
            raise ValueError("alpha_level must lie in (0, 1)")
        if self.p < 5:
            raise ValueError("the design needs p >= 5 mediators")
        if self.q < 1:
            raise ValueError("q must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["error_law"] = self.error_law.value
        return d


PRESETS = {
    "paper-example-1": SimConfig(c1=0.5, c2=0.0, error_law=ErrorLaw.GAUSSIAN),
    "paper-example-2": SimConfig(c1=0.5, c2=0.0, error_law=ErrorLaw.SCALED_T6),
}


@dataclass(frozen=True)
class Truth:
    alpha0: np.ndarray
    alpha1: np.ndarray
    beta: np.ndarray
    gamma_matrix: np.ndarray
    active: np.ndarray = field(default_factory=lambda: np.arange(5))


def rep_rng(seed: int, rep_id: int) -> np.random.Generator:
    """Independent stream for one replication, derived from (seed, rep_id) only."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep_id,)))


@functools.lru_cache(maxsize=8)
def ar_cholesky(p: int, rho: float) -> np.ndarray:
    idx = np.arange(p)
    S = rho ** np.abs(idx[:, None] - idx[None, :])
    L = np.linalg.cholesky(S)
    L.setflags(write=False)
    return L


def ar_covariance(p: int, rho: float) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def build_gamma(p: int, c1: float, rng: np.random.Generator, q: int = 1) -> np.ndarray:
    """q x p exposure-to-mediator coefficients: c1 * (0.2k for k<=5, N(0, 0.01) after)."""
    if p < 5:
        raise ValueError("p must be >= 5")
    tail = rng.normal(0.0, 0.1, size=(q, p - 5))
    tau = np.column_stack([np.tile(TAU_HEAD, (q, 1)), tail])
    return c1 * tau


def draw_errors(law: ErrorLaw, n: int, rng: np.random.Generator) -> np.ndarray:
    if law is ErrorLaw.GAUSSIAN:
        return ERROR_SD * rng.standard_normal(n)
    z = rng.standard_normal(n)
    chi = rng.chisquare(6, size=n)
    return z / np.sqrt(chi / 6.0) / math.sqrt(6.0)


def true_alpha0(p: int) -> np.ndarray:
    a = np.zeros(p)
    a[:5] = ALPHA0_HEAD
    return a


def generate_dataset(cfg: SimConfig, rep_id: int) -> tuple[Dataset, Truth]:
    rng = rep_rng(cfg.seed, rep_id)
    G = build_gamma(cfg.p, cfg.c1, rng, cfg.q)
    x = rng.standard_normal((cfg.n, cfg.q))
    L = ar_cholesky(cfg.p, cfg.rho)
    E = rng.standard_normal((cfg.n, cfg.p)) @ L.T
    M = x @ G + E
    a0 = true_alpha0(cfg.p)
    a1 = np.full(cfg.q, cfg.c2)
    y = M @ a0 + x @ a1 + draw_errors(cfg.error_law, cfg.n, rng)
    # G @ a0 equals 1.4 * c1 up to rounding; record the exact value
    truth = Truth(a0, a1, np.full(cfg.q, 1.4 * cfg.c1), G)
    return validate_dataset(y, x, M, include_intercept=False), truth


@dataclass
class RepOutcome:
    rep_id: int
    method: str
    ok: bool = True
    alpha1_hat: float = math.nan
    beta_hat: float = math.nan
    se_alpha1: float = math.nan
    se_beta: float = math.nan
    active_set_size: int = -1
    S_n: float = math.nan
    T_n: float = math.nan
    p_indirect: float = math.nan
    p_direct: float = math.nan
    reject_indirect: bool = False
    reject_direct: bool = False
    sigma2_clipped: bool = False
    lambda_selected: float = math.nan
    lla_iters: int = -1
    lla_fixed_point_gap: float = math.nan
    true_active_recovered: bool = False
    error: str = ""
    fit_seconds: float = math.nan


def lla_fixed_point_gap(d: Dataset, path, cfg: SolverConfig, penalize_all: bool = False) -> float:
    """Largest coefficient move (standardized scale) caused by one extra LLA step at the selected lambda."""
    ds, scale, zero_var = standardize_mediators(d)
    prob = ProfiledProblem(ds.y, ds.M, unpenalized_block(ds, penalize_all))
    b = path.selected.alpha0 * scale
    w = scad_derivative(np.abs(b), path.selected_lambda, cfg.a)
    w[zero_var] = np.inf
    b_next, *_ = prob.solve(w, b, cfg)
    return float(np.max(np.abs(b_next - b)))


def _fill(row: RepOutcome, fit, wald, fdir, level: float) -> RepOutcome:
    row.alpha1_hat = float(fit.alpha1_hat[0])
    row.beta_hat = float(fit.beta_hat[0])
    row.se_alpha1 = float(fit.se_alpha1[0])
    row.se_beta = float(fit.se_beta[0])
    row.active_set_size = fit.s_hat
    row.S_n, row.p_indirect = wald.statistic, wald.p_value
    row.T_n, row.p_direct = fdir.statistic, fdir.p_value
    crit = chi2_ppf(1.0 - level, wald.df)
    row.reject_indirect = bool(wald.statistic > crit)
    row.reject_direct = bool(fdir.statistic > crit)
    row.sigma2_clipped = fit.sigma2_sq == 0.0
    return row


def run_one(cfg: SimConfig, solver_cfg: SolverConfig, rep_id: int,
            methods=METHODS) -> list[RepOutcome]:
    """Generate one dataset and run every requested method on it; never raises."""
    rows = []
    try:
        d, truth = generate_dataset(cfg, rep_id)
    except Exception as exc:  # pragma: no cover - DGP failures are not expected
        return [RepOutcome(rep_id, m, ok=False, error=repr(exc)) for m in methods]
    for method in methods:
        row = RepOutcome(rep_id, method)
        t0 = time.perf_counter()
        try:
            if method == "penalized":
                path = fit_path_select(d, solver_cfg)
                fit = fit_mediation(d, solver_cfg, path=path)
                wald = wald_indirect_test(fit, d)
                fdir, fit = f_direct_test(d, solver_cfg, fit)
                row.fit_seconds = time.perf_counter() - t0
                row.lambda_selected = path.selected_lambda
                row.lla_iters = path.selected.n_iters
                row.lla_fixed_point_gap = lla_fixed_point_gap(d, path, solver_cfg)
                row.true_active_recovered = bool(np.all(fit.alpha0_hat[truth.active] != 0))
            elif method == "oracle":
                fit = oracle_fit(d, truth.active)
                wald = wald_indirect_test(fit, d)
                fdir = oracle_f_direct_test(d, truth.active, fit)
                row.fit_seconds = time.perf_counter() - t0
                row.true_active_recovered = True
            else:
                raise ValueError(f"unknown method {method!r}")
            _fill(row, fit, wald, fdir, cfg.alpha_level)
        except Exception as exc:
            row.ok = False
            row.error = f"{type(exc).__name__}: {exc}"
            row.fit_seconds = time.perf_counter() - t0
        rows.append(row)
    return rows


def _run_chunk(args):
    cfg, solver_cfg, rep_ids, methods = args
    out = []
    for r in rep_ids:
        out.extend(run_one(cfg, solver_cfg, r, methods))
    return out


def outcomes_frame(rows: list[RepOutcome]) -> pd.DataFrame:
    df = pd.DataFrame([asdict(r) for r in rows])
    return df.sort_values(["rep_id", "method"], kind="stable").reset_index(drop=True)


def run_replications(cfg: SimConfig, solver_cfg: SolverConfig | None = None,
                     methods=METHODS, workers: int = 1, rep_ids=None) -> pd.DataFrame:
    """One row per (replication, method), sorted by rep_id then method.

    Results depend only on (cfg, solver_cfg); the worker count changes
    nothing but wall time.
    """
    solver_cfg = solver_cfg or SolverConfig()
    methods = tuple(methods)
    rep_ids = list(range(cfg.n_reps)) if rep_ids is None else list(rep_ids)
    if workers <= 1:
        rows = _run_chunk((cfg, solver_cfg, rep_ids, methods))
    else:
        chunks = [rep_ids[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = [r for part in ex.map(_run_chunk, [(cfg, solver_cfg, c, methods)
                                                         for c in chunks]) for r in part]
    return outcomes_frame(rows)


def population_variances(cfg: SimConfig, active=None) -> AsymptoticVariances:
    """Asymptotic covariances from the design's population moments.

    The competitor matrix needs the full Gamma, whose tail is random; it is
    drawn from the replication-0 stream of ``cfg``.
    """
    rng = rep_rng(cfg.seed, 0)
    G = build_gamma(cfg.p, cfg.c1, rng, cfg.q)
    A = np.arange(5) if active is None else np.asarray(active)
    S_star = ar_covariance(cfg.p, cfg.rho)
    Sxx = np.eye(cfg.q)
    Sxm_full = G  # E[x m'] = Gamma since E[x x'] = I
    Smm_full = G.T @ G + S_star
    a0 = true_alpha0(cfg.p)
    sigma2_sq = float(a0 @ S_star @ a0)
    return asymptotic_variances(Sxx, Sxm_full[:, A], Smm_full[np.ix_(A, A)],
                                Sxm_full, Smm_full, ERROR_SD ** 2, sigma2_sq)


def theoretical_power(cfg: SimConfig, sweep: str, value: float) -> float:
    """Asymptotic rejection rate from the noncentral chi-square limit laws.

    ``sweep='c1'`` is the Wald test of the indirect effect at c1=value;
    ``sweep='c2'`` is the F-type test of the direct effect at c2=value.
    """
    if sweep == "c1":
        av = population_variances(replace(cfg, c1=value))
        beta = np.full(cfg.q, 1.4 * value)
        ncp = cfg.n * float(beta @ np.linalg.solve(av.var_beta, beta)) if np.any(beta) else 0.0
    elif sweep == "c2":
        av = population_variances(cfg)
        h = np.full(cfg.q, value)
        phi = av.var_alpha1 / ERROR_SD ** 2
        ncp = cfg.n * float(h @ np.linalg.solve(phi, h)) / ERROR_SD ** 2
    else:
        raise ValueError("sweep must be 'c1' or 'c2'")
    return chi2_power(cfg.q, ncp, cfg.alpha_level)


def power_curve(cfg_template: SimConfig, sweep: str, values, solver_cfg=None,
                methods=METHODS, workers: int = 1, return_outcomes: bool = False):
    """Rejection rates with binomial MC standard errors over a c1 or c2 sweep.

    One row per sweep value. ``rejection_rate``/``mc_se`` belong to the first
    method; further methods get prefixed columns (``oracle_rejection_rate``).
    ``theoretical`` is the asymptotic power of the swept test.

    Every sweep value reuses the template seed, so value 0 reproduces the
    size run exactly and neighbouring points share random numbers.
    """
    values = [float(v) for v in values]
    if not values:
        raise ValueError("power_curve needs at least one sweep value")
    if sweep not in ("c1", "c2"):
        raise ValueError("sweep must be 'c1' or 'c2'")
    methods = tuple(methods)
    col = "reject_indirect" if sweep == "c1" else "reject_direct"
    out, batches = [], []
    for v in values:
        cfg = replace(cfg_template, **{sweep: v})
        df = run_replications(cfg, solver_cfg, methods, workers)
        row = {"value": v, "test": (TestKind.WALD_INDIRECT if sweep == "c1" else TestKind.F_DIRECT).value}
        for i, m in enumerate(methods):
            sub = df[(df.method == m) & df.ok]
            k = len(sub)
            rate = float(sub[col].mean()) if k else math.nan
            prefix = "" if i == 0 else f"{m}_"
            row[prefix + "rejection_rate"] = rate
            row[prefix + "mc_se"] = math.sqrt(rate * (1 - rate) / k) if k else math.nan
            row[prefix + "n_ok"] = k
        row["theoretical"] = theoretical_power(cfg, sweep, v)
        out.append(row)
        batches.append(df.assign(sweep_value=v))
    table = pd.DataFrame(out)
    if return_outcomes:
        return table, pd.concat(batches, ignore_index=True)
    return table


def aggregate_tables(outcomes: pd.DataFrame, truth_alpha1: float, truth_beta: float,
                     scale: float = 100.0) -> dict:
    """Bias, empirical sd, mean reported se (and its sd) per method.

    Effect summaries are multiplied by ``scale``; rejection rates are not.
    Standard deviations of a single replication are reported as ``None``.
    """
    if outcomes.empty:
        raise ValueError("no outcomes to aggregate")

    def sd(x):
        return float(np.std(x, ddof=1) * scale) if len(x) > 1 else None

    summary = {"scale": scale, "scaled_fields": ["bias", "sd", "mean_se", "sd_se"],
               "methods": {}}
    for method, sub in outcomes.groupby("method", sort=True):
        ok = sub[sub.ok]
        entry = {"n_reps": int(len(sub)), "n_ok": int(len(ok))}
        for name, truth in (("alpha1", truth_alpha1), ("beta", truth_beta)):
            est, se = ok[f"{name}_hat"].to_numpy(), ok[f"se_{name}"].to_numpy()
            entry[name] = {
                "bias": float((est.mean() - truth) * scale) if len(est) else None,
                "sd": sd(est),
                "mean_se": float(se.mean() * scale) if len(se) else None,
                "sd_se": sd(se),
            }
        entry["reject_indirect"] = float(ok.reject_indirect.mean()) if len(ok) else None
        entry["reject_direct"] = float(ok.reject_direct.mean()) if len(ok) else None
        entry["mean_active_set_size"] = float(ok.active_set_size.mean()) if len(ok) else None
        entry["mean_fit_seconds"] = float(sub.fit_seconds.mean())
        entry["recovery_rate"] = float(ok.true_active_recovered.mean()) if len(ok) else None
        summary["methods"][str(method)] = entry
    return summary
