"""CSV ingestion and JSON serialization of fits, test reports and summaries."""

from __future__ import annotations

import csv
import json
import math
import os
import re
from pathlib import Path

import numpy as np

from .model import DataError, Dataset, MediationFit, TestReport, validate_dataset

_X_RE = re.compile(r"^x\d*$|^x_.+$", re.IGNORECASE)
_M_RE = re.compile(r"^m\d*$|^m_.+$", re.IGNORECASE)


def load_roles(path: str | os.PathLike) -> dict:
    """Roles file: JSON ``{"y": name, "x": [names], "m": [names]}``."""
    try:
        roles = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read roles file {path}: {exc}") from None
    if not isinstance(roles, dict) or not {"y", "x", "m"} <= roles.keys():
        raise DataError("roles file must be an object with keys 'y', 'x' and 'm'")
    if not isinstance(roles["y"], str):
        raise DataError("roles file: 'y' must be a single column name")
    for k in ("x", "m"):
        if isinstance(roles[k], str):
            roles[k] = [roles[k]]
        if not all(isinstance(c, str) for c in roles[k]):
            raise DataError(f"roles file: '{k}' must list column names")
    return roles


def roles_from_header(header: list[str]) -> dict:
    """Assign roles by name: ``y`` is the outcome, ``x*`` exposures, ``m*`` mediators."""
    ys = [h for h in header if h.strip().lower() == "y"]
    if len(ys) != 1:
        raise DataError("header must contain exactly one outcome column named 'y' "
                        "(or pass a roles file)")
    xs = [h for h in header if _X_RE.match(h.strip())]
    ms = [h for h in header if _M_RE.match(h.strip())]
    return {"y": ys[0], "x": xs, "m": ms}


def _parse_cell(text: str, line: int, col: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"line {line}, column '{col}': cannot parse {text!r} as a number") from None
    if not math.isfinite(v):
        raise DataError(f"line {line}, column '{col}': non-finite value {text!r}")
    return v


def read_csv_dataset(path: str | os.PathLike, roles: dict | None = None,
                     include_intercept: bool = True) -> Dataset:
    """Read a UTF-8 CSV with a header row into a validated Dataset.

    Line numbers in error messages count the header as line 1.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise DataError(f"{path}: unreadable header: {exc}") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DataError("duplicate column names in header")
        roles = roles or roles_from_header(header)
        pos = {h: i for i, h in enumerate(header)}
        for c in [roles["y"], *roles["x"], *roles["m"]]:
            if c not in pos:
                raise DataError(f"column '{c}' named in roles is not in the header")
        if not roles["m"]:
            raise DataError("no mediator columns (expected names m1, m2, ...)")
        cols = {"y": [pos[roles["y"]]], "x": [pos[c] for c in roles["x"]],
                "m": [pos[c] for c in roles["m"]]}
        rows = {k: [] for k in cols}
        try:
            for row in reader:
                line = reader.line_num
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(header):
                    raise DataError(f"line {line}: expected {len(header)} fields, got {len(row)}")
                for k, idx in cols.items():
                    rows[k].append([_parse_cell(row[i].strip(), line, header[i]) for i in idx])
        except (csv.Error, UnicodeDecodeError) as exc:
            raise DataError(f"{path}: malformed CSV near line {reader.line_num}: {exc}") from None
    n = len(rows["y"])
    if n == 0:
        raise DataError(f"{path} has no data rows")
    y = np.asarray(rows["y"]).ravel()
    X = np.asarray(rows["x"], dtype=float).reshape(n, len(cols["x"]))
    M = np.asarray(rows["m"], dtype=float).reshape(n, len(cols["m"]))
    return validate_dataset(y, X, M, include_intercept=include_intercept,
                            exposure_names=tuple(roles["x"]), mediator_names=tuple(roles["m"]))


def write_csv_dataset(path, d: Dataset) -> None:
    """Inverse of :func:`read_csv_dataset` for datasets without an intercept column."""
    xs = [c for i, c in enumerate(d.exposure_names) if i != d.intercept_index]
    X = np.delete(d.X, d.intercept_index, axis=1) if d.include_intercept else d.X
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["y", *xs, *d.mediator_names])
        for i in range(d.n):
            w.writerow([repr(float(d.y[i])), *map(lambda v: repr(float(v)), X[i]),
                        *map(lambda v: repr(float(v)), d.M[i])])


def matrix_json(a) -> dict:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return {"rows": int(a.shape[0]), "cols": int(a.shape[1]), "data": a.ravel(order="C").tolist()}


def matrix_from_json(obj: dict) -> np.ndarray:
    return np.asarray(obj["data"], dtype=float).reshape(obj["rows"], obj["cols"])


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def fit_to_json(fit: MediationFit, d: Dataset | None = None, mediator_se=None) -> dict:
    exposures = list(d.exposure_names) if d is not None else [f"x{i + 1}" for i in range(fit.alpha1_hat.size)]
    mediators = list(d.mediator_names) if d is not None else None
    active = [int(j) for j in fit.active_set]
    out = {
        "method": fit.method,
        "n": fit.n,
        "exposures": exposures,
        "alpha1_hat": fit.alpha1_hat.tolist(),
        "beta_hat": fit.beta_hat.tolist(),
        "gamma_hat": fit.gamma_hat.tolist(),
        "se_alpha1": fit.se_alpha1.tolist(),
        "se_beta": fit.se_beta.tolist(),
        "cov_alpha1": matrix_json(fit.cov_alpha1),
        "cov_beta": matrix_json(fit.cov_beta),
        "active_set": active,
        "active_names": [mediators[j] for j in active] if mediators else None,
        "alpha0_active": [float(fit.alpha0_hat[j]) for j in active],
        "alpha0_active_se": None if mediator_se is None else [float(s) for s in mediator_se],
        "p": int(fit.alpha0_hat.size),
        "sigma1_sq": fit.sigma1_sq,
        "sigma2_sq": fit.sigma2_sq,
        "sigma_total_sq": fit.sigma_total_sq,
        "rss1": fit.rss1,
        "rss0": _num(fit.rss0),
        "lambda_selected": _num(fit.lambda_selected),
        "diagnostics": list(fit.diagnostics),
    }
    return out


def report_to_json(r: TestReport) -> dict:
    return {"kind": r.kind.value, "statistic": r.statistic, "df": r.df, "p_value": r.p_value,
            "noncentrality": _num(r.noncentrality), "diagnostics": list(r.diagnostics)}


def dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False, allow_nan=False)
        fh.write("\n")
