"""Shared data model: datasets, penalty specs, fit records and test reports."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Raised when raw arrays cannot form a valid :class:`Dataset`."""


class DegenerateFitError(RuntimeError):
    """Raised when a fit leaves too few residual degrees of freedom."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Outcome ``y`` (n,), exposures ``X`` (n, q) and mediators ``M`` (n, p).

    When ``include_intercept`` is set, the last column of ``X`` is the
    constant column appended by :func:`validate_dataset`.
    """

    y: np.ndarray
    X: np.ndarray
    M: np.ndarray
    include_intercept: bool = False
    exposure_names: tuple[str, ...] = ()
    mediator_names: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def q(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.M.shape[1]

    @property
    def intercept_index(self) -> int | None:
        return self.q - 1 if self.include_intercept else None

    @property
    def tested_exposures(self) -> np.ndarray:
        """Indices of X columns that are real exposures (the intercept is not tested)."""
        idx = np.arange(self.q)
        if self.include_intercept:
            idx = idx[:-1]
        return idx


def validate_dataset(y, X, M, include_intercept: bool = False,
                     exposure_names=None, mediator_names=None) -> Dataset:
    """Check shapes and finiteness and return an immutable :class:`Dataset`."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    M = np.asarray(M, dtype=float)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim != 1:
        raise DataError(f"y must be a vector, got shape {y.shape}")
    if X.ndim == 1:
        X = X[:, None]
    if M.ndim == 1:
        M = M[:, None]
    if X.ndim != 2 or M.ndim != 2:
        raise DataError("X and M must be 2-d arrays")
    n = y.shape[0]
    if X.shape[0] != n or M.shape[0] != n:
        raise DataError(
            f"row count mismatch: y has {n}, X has {X.shape[0]}, M has {M.shape[0]}")
    if M.shape[1] == 0:
        raise DataError("mediator matrix is empty")
    if X.shape[1] == 0 and not include_intercept:
        raise DataError("exposure matrix is empty")
    for name, a in (("y", y), ("X", X), ("M", M)):
        bad = ~np.isfinite(a)
        if bad.any():
            loc = np.argwhere(bad)[0]
            raise DataError(f"non-finite entry in {name} at index {tuple(int(i) for i in loc)}")

    q_raw = X.shape[1]
    exposure_names = tuple(exposure_names) if exposure_names is not None else tuple(
        f"x{j + 1}" for j in range(q_raw))
    if include_intercept:
        X = np.column_stack([X, np.ones(n)])
        exposure_names = exposure_names + ("Intercept",)
    q = X.shape[1]
    if n <= q + 1:
        raise DataError(f"need n >= q + 2 observations, got n={n}, q={q}")
    mediator_names = tuple(mediator_names) if mediator_names is not None else tuple(
        f"m{j + 1}" for j in range(M.shape[1]))
    if len(exposure_names) != q or len(mediator_names) != M.shape[1]:
        raise DataError("column name count does not match matrix width")
    return Dataset(_frozen(y), _frozen(X), _frozen(M), bool(include_intercept),
                   exposure_names, mediator_names)


def standardize_mediators(d: Dataset) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Rescale every mediator column to unit sample sd.

    Returns the rescaled dataset, the scale vector (original sd, 1 for
    zero-variance columns) and a boolean mask of zero-variance columns.
    Coefficients fitted on the rescaled data map back via ``coef / scale``.
    """
    sd = d.M.std(axis=0, ddof=1)
    zero_var = ~(sd > 1e-12 * np.maximum(1.0, np.abs(d.M).max(axis=0)))
    scale = np.where(zero_var, 1.0, sd)
    ds = Dataset(d.y, d.X, _frozen(d.M / scale), d.include_intercept,
                 d.exposure_names, d.mediator_names)
    return ds, scale, zero_var


def destandardize_coef(coef: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return np.asarray(coef) / scale


class PenaltyFamily(str, enum.Enum):
    SCAD = "SCAD"
    L1 = "L1"


@dataclass(frozen=True)
class PenaltySpec:
    family: PenaltyFamily = PenaltyFamily.SCAD
    lam: float = 0.0
    a: float = 3.7

    def __post_init__(self):
        object.__setattr__(self, "family", PenaltyFamily(self.family))
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.family is PenaltyFamily.SCAD and not self.a > 2:
            raise ValueError(f"SCAD shape parameter must exceed 2, got {self.a}")


@dataclass(frozen=True, eq=False)
class MediationFit:
    """Direct, indirect and total effect estimates with plug-in covariances."""

    alpha1_hat: np.ndarray
    alpha0_hat: np.ndarray
    active_set: np.ndarray
    gamma_hat: np.ndarray
    beta_hat: np.ndarray
    sigma1_sq: float
    sigma2_sq: float
    sigma_total_sq: float
    rss1: float
    cov_alpha1: np.ndarray
    cov_beta: np.ndarray
    lambda_selected: float | None
    n: int
    rss0: float | None = None
    method: str = "penalized"
    diagnostics: tuple[str, ...] = ()

    @property
    def s_hat(self) -> int:
        return int(self.active_set.size)

    @property
    def se_alpha1(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov_alpha1), 0, None))

    @property
    def se_beta(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov_beta), 0, None))


class TestKind(str, enum.Enum):
    __test__ = False
    WALD_INDIRECT = "WaldIndirect"
    F_DIRECT = "FDirect"


@dataclass(frozen=True)
class TestReport:
    kind: TestKind
    statistic: float
    df: int
    p_value: float
    noncentrality: float | None = None
    diagnostics: tuple[str, ...] = field(default=())

    __test__ = False  # keep pytest from collecting this class

    def reject(self, level: float) -> bool:
        return self.p_value < level
