"""Partial penalized least squares: weighted L1 coordinate descent, SCAD-LLA,
lambda paths and HBIC selection.

All solvers minimise

    (1/2n) ||y - M a0 - U a1||^2 + sum_j w_j |a0_j|

where ``U`` is the unpenalized block (the exposures X, only the intercept
column, or nothing). ``a1`` is profiled out exactly: the mediator block is
fitted on data with ``U`` projected away and ``a1`` is recovered by least
squares on the partial residual, so the unpenalized normal equations hold at
every iterate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._cd import coordinate_descent
from .model import Dataset, PenaltyFamily, PenaltySpec, standardize_mediators

log = logging.getLogger(__name__)

TIE_RTOL = 1e-10


class SingularDesignError(np.linalg.LinAlgError):
    """The unpenalized block is rank deficient."""


@dataclass(frozen=True)
class SolverConfig:
    max_cd_iters: int = 10000
    cd_tol: float = 1e-7
    max_lla_iters: int = 20
    lambda_grid_size: int = 100
    lambda_min_ratio: float = 0.01
    # path stops once this many mediators are active; None -> n // 4
    max_active: int | None = None
    a: float = 3.7
    penalty: str = "SCAD"
    debug: bool = False

    def __post_init__(self):
        if not self.cd_tol > 0:
            raise ValueError("cd_tol must be positive")
        if self.max_cd_iters < 1 or self.max_lla_iters < 1:
            raise ValueError("iteration limits must be >= 1")
        if self.lambda_grid_size < 1:
            raise ValueError("lambda_grid_size must be >= 1")
        if not 0 < self.lambda_min_ratio < 1:
            raise ValueError("lambda_min_ratio must lie in (0, 1)")
        PenaltySpec(PenaltyFamily(self.penalty), 0.0, self.a)


def scad_derivative(t, lam: float, a: float = 3.7):
    """SCAD derivative ``lam * {I(t<=lam) + (a*lam - t)_+ / ((a-1)*lam) * I(t>lam)}``."""
    if not a > 2:
        raise ValueError("SCAD shape parameter must exceed 2")
    t = np.asarray(t, dtype=float)
    if lam <= 0:
        return np.zeros_like(t) if t.ndim else 0.0
    out = np.where(t <= lam, lam, lam * (np.maximum(a * lam - t, 0.0) / ((a - 1.0) * lam)))
    return out if out.ndim else float(out)


def unpenalized_block(d: Dataset, penalize_all: bool) -> np.ndarray:
    """Columns left unpenalized: all of X, or only the intercept under the null model."""
    if not penalize_all:
        return d.X
    if d.include_intercept:
        return d.X[:, [d.intercept_index]]
    return np.empty((d.n, 0))


def ols(y: np.ndarray, U: np.ndarray, what: str = "design") -> np.ndarray:
    """Least squares via QR, raising on rank deficiency."""
    Q, R = _checked_qr(U, what)
    return np.linalg.solve(R, Q.T @ y) if U.shape[1] else np.zeros(0)


def _checked_qr(U: np.ndarray, what: str):
    Q, R = np.linalg.qr(U)
    if U.shape[1]:
        diag = np.abs(np.diag(R))
        scale = max(np.linalg.norm(U, axis=0).max(), 1e-300)
        bad = np.flatnonzero(diag <= 1e-10 * scale)
        if bad.size:
            raise SingularDesignError(
                f"{what} is rank deficient: column(s) {bad.tolist()} are collinear "
                "with preceding columns")
    return Q, R


class ProfiledProblem:
    """Gram-form precomputation for one (y, M, U) triple, reused along a path."""

    def __init__(self, y: np.ndarray, M: np.ndarray, U: np.ndarray):
        self.y = y
        self.M = M
        self.U = U
        self.n, self.p = M.shape
        self.Q, self.R = _checked_qr(U, "unpenalized block")
        if U.shape[1]:
            Mt = M - self.Q @ (self.Q.T @ M)
            yt = y - self.Q @ (self.Q.T @ y)
        else:
            Mt, yt = M, y
        n = self.n
        self.G = np.ascontiguousarray(Mt.T @ Mt / n)
        self.c = Mt.T @ yt / n
        self.yy_half = 0.5 * float(yt @ yt) / n

    def solve(self, weights: np.ndarray, b0: np.ndarray | None, cfg: SolverConfig):
        b = np.zeros(self.p) if b0 is None else np.array(b0, dtype=float)
        trace = np.empty(cfg.max_cd_iters if cfg.debug else 0)
        w = np.ascontiguousarray(weights, dtype=float)
        sweeps, converged, nt = coordinate_descent(
            self.G, self.c, w, b, cfg.max_cd_iters, cfg.cd_tol, self.yy_half, trace)
        if cfg.debug:
            tr = trace[:nt]
            rise = np.diff(tr)
            if rise.size and rise.max() > 1e-12 * max(1.0, abs(tr[0])):
                raise AssertionError(f"CD objective increased by {rise.max():.3e}")
        return b, int(sweeps), bool(converged), trace[:nt]

    def alpha1(self, b: np.ndarray) -> np.ndarray:
        if not self.U.shape[1]:
            return np.zeros(0)
        return np.linalg.solve(self.R, self.Q.T @ (self.y - self.M @ b))

    def residual(self, b: np.ndarray, a1: np.ndarray) -> np.ndarray:
        r = self.y - self.M @ b
        if a1.size:
            r = r - self.U @ a1
        return r

    def lambda_max(self, exclude: np.ndarray | None = None) -> float:
        c = np.abs(self.c)
        if exclude is not None:
            c = np.where(exclude, 0.0, c)
        return float(c.max())


@dataclass
class WeightedL1Result:
    alpha0: np.ndarray
    alpha1: np.ndarray
    rss: float
    converged: bool
    n_sweeps: int
    objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __iter__(self):
        return iter((self.alpha0, self.alpha1, self.rss))


def _l1_result(prob: ProfiledProblem, b, sweeps, converged, trace) -> WeightedL1Result:
    a1 = prob.alpha1(b)
    r = prob.residual(b, a1)
    return WeightedL1Result(b, a1, float(r @ r), converged, sweeps, trace)


def solve_weighted_partial_l1(d: Dataset, weights, warm_start=None,
                              cfg: SolverConfig | None = None,
                              penalize_all: bool = False,
                              problem: ProfiledProblem | None = None) -> WeightedL1Result:
    """Minimise the weighted partial-L1 objective on the dataset as given (no rescaling).

    ``weights`` may contain ``inf`` to pin a coordinate at zero. A fit that
    hits ``max_cd_iters`` is returned with ``converged=False``.
    """
    cfg = cfg or SolverConfig()
    w = np.asarray(weights, dtype=float)
    if w.shape != (d.p,) or np.isnan(w).any() or (w < 0).any():
        raise ValueError("weights must be a nonnegative vector of length p")
    prob = problem or ProfiledProblem(d.y, d.M, unpenalized_block(d, penalize_all))
    b, sweeps, conv, trace = prob.solve(w, warm_start, cfg)
    if not conv:
        log.warning("coordinate descent hit max_cd_iters=%d", cfg.max_cd_iters)
    return _l1_result(prob, b, sweeps, conv, trace)


@dataclass
class LLAResult:
    alpha0: np.ndarray
    alpha1: np.ndarray
    rss: float
    n_iters: int
    converged: bool
    weights: np.ndarray
    cd_converged: bool = True

    def __iter__(self):
        return iter((self.alpha0, self.alpha1, self.rss, self.n_iters))


def _fixed_point_for_pattern(prob: ProfiledProblem, b: np.ndarray, lam: float, a: float,
                             pinned: np.ndarray | None, max_refine: int = 10) -> np.ndarray | None:
    """Exact LLA fixed point reached from the support and signs of ``b``.

    Once the SCAD region (flat L1 part, quadratic middle, zero-penalty tail)
    of every active coefficient is fixed, the stationarity conditions are
    linear in the active coefficients. Regions are re-read from each trial
    solution, up to ``max_refine`` times, and coordinates whose sign flips
    leave the support. Returns ``None`` when the pattern never settles or an
    inactive KKT condition fails; the caller then keeps iterating normally.
    """
    A = np.flatnonzero(b)
    s = np.sign(b[A])
    t = np.abs(b[A])
    for _ in range(max_refine):
        if A.size == 0:
            return None
        mid = (t > lam) & (t < a * lam)
        low = t <= lam
        kappa = np.where(low, lam, np.where(mid, a * lam / (a - 1.0), 0.0))
        try:
            bA = np.linalg.solve(prob.G[np.ix_(A, A)] - np.diag(mid / (a - 1.0)),
                                 prob.c[A] - s * kappa)
        except np.linalg.LinAlgError:
            return None
        flip = np.sign(bA) != s
        if np.any(flip):
            # coordinates crossing zero leave the support
            A, s, t = A[~flip], s[~flip], t[~flip]
            continue
        tA = np.abs(bA)
        if not (np.any(low & (tA > lam)) or np.any(mid & ((tA <= lam) | (tA >= a * lam)))
                or np.any(~low & ~mid & (tA < a * lam))):
            break
        t = tA
    else:
        return None
    g = prob.c - prob.G[:, A] @ bA
    inactive = np.ones(prob.p, dtype=bool)
    inactive[A] = False
    if pinned is not None:
        inactive &= ~pinned
    if np.any(np.abs(g[inactive]) > lam):
        return None
    out = np.zeros(prob.p)
    out[A] = bA
    return out


def _scad_weights(b, lam, a, pinned):
    w = scad_derivative(np.abs(b), lam, a)
    if pinned is not None:
        w[pinned] = np.inf
    return w


def _lla_on_problem(prob: ProfiledProblem, pen: PenaltySpec, cfg: SolverConfig,
                    b0, pinned: np.ndarray | None) -> LLAResult:
    lam = pen.lam
    w = np.full(prob.p, lam)
    if pinned is not None:
        w[pinned] = np.inf
    b, _, cd_ok, _ = prob.solve(w, b0, cfg)
    n_iters = 0
    converged = pen.family is PenaltyFamily.L1
    while not converged and n_iters < cfg.max_lla_iters:
        w = _scad_weights(b, lam, pen.a, pinned)
        support = b != 0
        b, _, ok, _ = prob.solve(w, b, cfg)
        cd_ok &= ok
        n_iters += 1
        w_next = _scad_weights(b, lam, pen.a, pinned)
        fin = np.isfinite(w_next)
        same_support = np.array_equal(support, b != 0)
        if same_support and np.max(np.abs(w_next[fin] - w[fin]), initial=0.0) <= cfg.cd_tol:
            converged = True
        else:
            # jump to the limit of the iteration on the current sign/region
            # pattern; the next reweighted solve then confirms it
            jump = _fixed_point_for_pattern(prob, b, lam, pen.a, pinned)
            if jump is not None:
                b = jump
    a1 = prob.alpha1(b)
    r = prob.residual(b, a1)
    return LLAResult(b, a1, float(r @ r), n_iters, converged, w, cd_ok)


def lla_fit(d: Dataset, pen: PenaltySpec, cfg: SolverConfig | None = None,
            penalize_all: bool = False, warm_start=None,
            problem: ProfiledProblem | None = None) -> LLAResult:
    """Local linear approximation for SCAD, started from the uniform-weight L1 fit.

    Stops once the support and all weights are unchanged between iterations,
    or after ``cfg.max_lla_iters`` reweighted solves. The dataset is used at
    its given scale; :func:`fit_path_select` handles standardization.
    """
    cfg = cfg or SolverConfig()
    prob = problem or ProfiledProblem(d.y, d.M, unpenalized_block(d, penalize_all))
    return _lla_on_problem(prob, pen, cfg, warm_start, None)


def hbic_score(rss: float, df: int, n: int, p_plus_q: int) -> float:
    """``log(rss) + df * log(log n) * log(p + q) / n``."""
    if n < 3:
        raise ValueError("HBIC needs n >= 3")
    if rss <= 0:
        log.warning("zero residual sum of squares in HBIC; returning sentinel score")
        return -np.finfo(float).max
    return float(np.log(rss) + df * np.log(np.log(n)) * np.log(p_plus_q) / n)


def lambda_grid(d: Dataset, cfg: SolverConfig | None = None, penalize_all: bool = False,
                problem: ProfiledProblem | None = None,
                exclude: np.ndarray | None = None) -> np.ndarray:
    """Log-spaced descending grid from ``max_j |M_j' r| / n`` down by ``lambda_min_ratio``.

    ``r`` is the residual of y on the unpenalized block. A zero maximum gives
    the single-point grid ``[0.0]``.
    """
    cfg = cfg or SolverConfig()
    prob = problem or ProfiledProblem(d.y, d.M, unpenalized_block(d, penalize_all))
    lmax = prob.lambda_max(exclude)
    if not lmax > 1e-300:
        log.warning("residual is uncorrelated with every mediator; lambda grid is {0}")
        return np.array([0.0])
    if cfg.lambda_grid_size == 1:
        return np.array([lmax])
    return lmax * np.logspace(0.0, np.log10(cfg.lambda_min_ratio), cfg.lambda_grid_size)


@dataclass
class PathFit:
    alpha0: np.ndarray
    alpha1: np.ndarray
    df: int
    rss: float
    n_iters: int
    converged: bool


@dataclass
class PathResult:
    """Per-lambda fits on the original mediator scale plus their HBIC scores.

    ``lambdas`` refer to the standardized mediator scale. The path is cut
    short once the active set exceeds the configured ``max_active``.
    """

    lambdas: np.ndarray
    fits: list[PathFit]
    hbic_scores: np.ndarray
    selected_index: int
    scale: np.ndarray
    zero_variance: np.ndarray
    diagnostics: list[str] = field(default_factory=list)

    @property
    def selected(self) -> PathFit:
        return self.fits[self.selected_index]

    @property
    def selected_lambda(self) -> float:
        return float(self.lambdas[self.selected_index])


def fit_path_select(d: Dataset, cfg: SolverConfig | None = None, penalize_all: bool = False,
                    warm_start: bool = True) -> PathResult:
    """Fit the penalized model over the lambda grid and select by HBIC."""
    cfg = cfg or SolverConfig()
    ds, scale, zero_var = standardize_mediators(d)
    U = unpenalized_block(ds, penalize_all)
    prob = ProfiledProblem(ds.y, ds.M, U)
    lambdas = lambda_grid(ds, cfg, problem=prob, exclude=zero_var)
    pen_family = PenaltyFamily(cfg.penalty)
    max_active = cfg.max_active if cfg.max_active is not None else d.n // 4
    max_active = min(max_active, d.n - U.shape[1] - 2, d.p)
    pinned = zero_var if zero_var.any() else None
    diagnostics = []
    if zero_var.any():
        diagnostics.append(f"zero-variance mediator columns pinned at 0: "
                           f"{np.flatnonzero(zero_var).tolist()}")
    if lambdas.size == 1 and lambdas[0] == 0.0:
        diagnostics.append("degenerate lambda grid {0}")

    n, k = d.n, U.shape[1]
    p_plus_q = d.p + k
    fits, scores = [], []
    b_prev = None
    for lam in lambdas:
        res = _lla_on_problem(prob, PenaltySpec(pen_family, float(lam), cfg.a), cfg,
                              b_prev if warm_start else None, pinned)
        b_prev = res.alpha0
        df = int(np.count_nonzero(res.alpha0) + np.count_nonzero(res.alpha1))
        fit = PathFit(res.alpha0 / scale, res.alpha1, df, res.rss, res.n_iters,
                      res.cd_converged)
        s = np.count_nonzero(res.alpha0)
        if s > max_active:
            diagnostics.append(f"path truncated at lambda={lam:.6g} ({s} active mediators)")
            break
        fits.append(fit)
        if not res.cd_converged:
            scores.append(np.inf)
            diagnostics.append(f"coordinate descent did not converge at lambda={lam:.6g}")
        else:
            scores.append(hbic_score(res.rss, df, n, p_plus_q))
    scores = np.asarray(scores)
    best = scores.min()
    # scores equal up to rounding count as ties; the largest lambda wins
    sel = int(np.flatnonzero(scores <= best + TIE_RTOL * max(1.0, abs(best)))[0])
    return PathResult(lambdas[: len(fits)], fits, scores, sel, scale, zero_var, diagnostics)
