"""Command-line interface: ``hdmed fit``, ``hdmed simulate`` and ``hdmed power``.

Exit codes
    0  success
    2  bad input (unreadable CSV, malformed config, invalid flags)
    3  degenerate fit (singular design, no residual degrees of freedom)
    4  more than 5% of simulation replications failed
    1  unexpected internal error
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
from contextlib import contextmanager
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .inference import (DegenerateVarianceError, f_direct_test, fit_mediation,
                        mediator_standard_errors, wald_indirect_test)
from .io import dump_json, fit_to_json, load_roles, read_csv_dataset, report_to_json
from .model import DataError, DegenerateFitError
from .simulation import METHODS, PRESETS, SimConfig, aggregate_tables, power_curve, run_replications
from .solver import SingularDesignError, SolverConfig, fit_path_select

log = logging.getLogger("hdmed")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_DEGENERATE, EXIT_REPS = 0, 1, 2, 3, 4
DEFAULT_SEED = SimConfig().seed
MIN_SUCCESS = 0.95


class UsageError(Exception):
    pass


def load_schema(name: str) -> dict:
    text = resources.files("hdmed").joinpath("schemas", f"{name}.schema.json").read_text("utf-8")
    return json.loads(text)


def _validate(obj, schema_name: str, what: str) -> None:
    try:
        jsonschema.validate(obj, load_schema(schema_name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"{what}: {exc.message} (at {where})") from None


# ---------------------------------------------------------------- output dirs

@contextmanager
def atomic_output(out: Path, overwrite: bool):
    """Yield a temp directory beside ``out``; rename it into place on success."""
    out = out.resolve()
    if out.exists() and not overwrite:
        raise UsageError(f"output directory {out} already exists (use --overwrite)")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if out.exists():
        old = out.with_name(f".{out.name}.old-{os.getpid()}")
        os.replace(out, old)
    os.replace(tmp, out)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest(command: str, args: argparse.Namespace, inputs: list[str], config: dict,
             seed: int | None) -> dict:
    return {
        "command": command,
        "argv": sys.argv[1:],
        "inputs": [{"path": str(Path(p).resolve()), "sha256": _sha256(p)} for p in inputs],
        "config": config,
        "output_dir": str(Path(args.out).resolve()),
        "seed": seed,
        "tool_version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "platform": {"python": platform.python_version(), "numpy": np.__version__},
    }


# ---------------------------------------------------------------- configs

def solver_config(args, base: dict | None = None) -> SolverConfig:
    kw = dict(base or {})
    for flag, key in (("lambda_grid", "lambda_grid_size"), ("lambda_min_ratio", "lambda_min_ratio"),
                      ("cd_tol", "cd_tol"), ("max_lla_iters", "max_lla_iters"),
                      ("max_cd_iters", "max_cd_iters")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[key] = v
    try:
        return SolverConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid solver settings: {exc}") from None


def read_sim_config(args) -> tuple[SimConfig, dict, list[str]]:
    """Build a SimConfig from a preset, a config JSON or a previous manifest, then apply flags."""
    inputs: list[str] = []
    solver_base: dict = {}
    if args.preset:
        cfg_dict = PRESETS[args.preset].to_dict()
    elif args.config:
        inputs.append(args.config)
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if isinstance(raw, dict) and "command" in raw and "config" in raw:
            raw = raw["config"]  # a manifest from an earlier run
        _validate(raw, "simconfig", f"config {args.config}")
        raw = dict(raw)
        solver_base = raw.pop("solver", {}) or {}
        sweep = raw.pop("sweep", None)
        if sweep and hasattr(args, "sweep") and args.sweep is None:
            args.sweep = sweep.get("parameter")
            if not (args.values or args.start is not None):
                args.values = ",".join(repr(float(v)) for v in sweep.get("values", []))
        methods = raw.pop("methods", None)
        if methods and args.methods is None:
            args.methods = ",".join(methods)
        base = PRESETS[raw.pop("preset")].to_dict() if "preset" in raw else SimConfig().to_dict()
        base.update(raw)
        cfg_dict = base
    else:
        raise UsageError("give a config JSON file or --preset")
    for key in ("seed", "n_reps", "alpha_level", "c1", "c2"):
        v = getattr(args, key, None)
        if v is not None:
            cfg_dict[key] = v
    try:
        cfg = SimConfig(**cfg_dict)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid simulation config: {exc}") from None
    return cfg, solver_base, inputs


def _config_record(cfg: SimConfig, scfg: SolverConfig, methods, **extra) -> dict:
    d = cfg.to_dict()
    d["solver"] = dataclasses.asdict(scfg)
    d["methods"] = list(methods)
    d.update(extra)
    return d


# ---------------------------------------------------------------- commands

def _summary_table(d, fit, wald, fdir, med_se) -> str:
    lines = [f"n = {d.n}, p = {d.p}, selected lambda = {fit.lambda_selected:.6g}, "
             f"|A| = {fit.s_hat}", ""]
    lines.append(f"{'exposure':<16}{'direct':>12}{'se':>10}{'indirect':>12}{'se':>10}{'total':>12}")
    for j, name in enumerate(d.exposure_names):
        lines.append(f"{name:<16}{fit.alpha1_hat[j]:>12.4f}{fit.se_alpha1[j]:>10.4f}"
                     f"{fit.beta_hat[j]:>12.4f}{fit.se_beta[j]:>10.4f}{fit.gamma_hat[j]:>12.4f}")
    lines += ["", f"Wald test of indirect effect: S_n = {wald.statistic:.4f}, df = {wald.df}, "
              f"p = {wald.p_value:.4g}",
              f"F-type test of direct effect: T_n = {fdir.statistic:.4f}, df = {fdir.df}, "
              f"p = {fdir.p_value:.4g}", "", "selected mediators"]
    lines.append(f"{'mediator':<16}{'coef':>12}{'se':>10}")
    for k, j in enumerate(fit.active_set):
        lines.append(f"{d.mediator_names[j]:<16}{fit.alpha0_hat[j]:>12.4f}{med_se[k]:>10.4f}")
    if not fit.active_set.size:
        lines.append("(none)")
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    roles = load_roles(args.roles) if args.roles else None
    d = read_csv_dataset(args.data, roles, include_intercept=args.intercept)
    scfg = solver_config(args)
    path = fit_path_select(d, scfg)
    fit = fit_mediation(d, scfg, path=path)
    wald = wald_indirect_test(fit, d)
    fdir, fit = f_direct_test(d, scfg, fit)
    med_se = mediator_standard_errors(d, fit)
    crit = float(args.alpha_level)
    fit_js = fit_to_json(fit, d, med_se)
    tests_js = {"alpha_level": crit,
                "wald_indirect": dict(report_to_json(wald), reject=wald.reject(crit)),
                "f_direct": dict(report_to_json(fdir), reject=fdir.reject(crit))}
    _validate(fit_js, "fit", "fit.json")
    _validate(tests_js, "tests", "tests.json")
    inputs = [args.data] + ([args.roles] if args.roles else [])
    config = {"intercept": args.intercept, "alpha_level": crit,
              "solver": dataclasses.asdict(scfg)}
    with atomic_output(Path(args.out), args.overwrite) as tmp:
        dump_json(fit_js, tmp / "fit.json")
        dump_json(tests_js, tmp / "tests.json")
        (tmp / "summary.txt").write_text(_summary_table(d, fit, wald, fdir, med_se))
        dump_json(manifest("fit", args, inputs, config, None), tmp / "manifest.json")
    sys.stdout.write(_summary_table(d, fit, wald, fdir, med_se))
    return EXIT_OK


def _success_code(df) -> int:
    rate = float(df.ok.mean())
    if rate < MIN_SUCCESS:
        log.error("only %.1f%% of replications succeeded", 100 * rate)
        return EXIT_REPS
    return EXIT_OK


def _write_outcomes(df, tmp: Path, name: str) -> None:
    df.drop(columns=["fit_seconds"]).to_csv(tmp / name, index=False)
    cols = [c for c in ("sweep_value", "rep_id", "method", "fit_seconds") if c in df.columns]
    df[cols].to_csv(tmp / name.replace(".csv", "_timings.csv"), index=False)


def cmd_simulate(args) -> int:
    cfg, solver_base, inputs = read_sim_config(args)
    scfg = solver_config(args, solver_base)
    methods = _methods(args)
    df = run_replications(cfg, scfg, methods, workers=args.workers)
    summary = aggregate_tables(df, cfg.c2, 1.4 * cfg.c1)
    summary.update(config=cfg.to_dict(), truth={"alpha1": cfg.c2, "beta": 1.4 * cfg.c1},
                   n_failed=int((~df.ok).sum()), success_rate=float(df.ok.mean()))
    _validate(summary, "summary", "summary.json")
    with atomic_output(Path(args.out), args.overwrite) as tmp:
        _write_outcomes(df, tmp, "replications.csv")
        dump_json(summary, tmp / "summary.json")
        dump_json(manifest("simulate", args, inputs, _config_record(cfg, scfg, methods), cfg.seed),
                  tmp / "manifest.json")
    return _success_code(df)


def _methods(args) -> tuple[str, ...]:
    methods = tuple(m.strip() for m in (args.methods or ",".join(METHODS)).split(",") if m.strip())
    bad = set(methods) - set(METHODS)
    if bad or not methods:
        raise UsageError(f"--methods must name some of {', '.join(METHODS)}")
    return methods


def _parse_values(args) -> list[float]:
    if args.values:
        try:
            return [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    if None not in (args.start, args.stop, args.step):
        if args.step <= 0:
            raise UsageError("--step must be positive")
        k = int(np.floor((args.stop - args.start) / args.step + 1e-9)) + 1
        return [round(args.start + i * args.step, 12) for i in range(max(k, 0))]
    raise UsageError("give --values or all of --start/--stop/--step")


def cmd_power(args) -> int:
    cfg, solver_base, inputs = read_sim_config(args)
    scfg = solver_config(args, solver_base)
    if args.sweep not in ("c1", "c2"):
        raise UsageError("give --sweep c1|c2 or a 'sweep' object in the config")
    values = _parse_values(args)
    if not values:
        raise UsageError("empty sweep")
    methods = _methods(args)
    table, outcomes = power_curve(cfg, args.sweep, values, scfg, methods,
                                  workers=args.workers, return_outcomes=True)
    with atomic_output(Path(args.out), args.overwrite) as tmp:
        table.to_csv(tmp / "power.csv", index=False)
        _write_outcomes(outcomes, tmp, "replications.csv")
        rec = _config_record(cfg, scfg, methods, sweep={"parameter": args.sweep, "values": values})
        dump_json(manifest("power", args, inputs, rec, cfg.seed), tmp / "manifest.json")
    return _success_code(outcomes)


# ---------------------------------------------------------------- parser

def _add_solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--lambda-grid", dest="lambda_grid", type=int, help="number of lambda values")
    g.add_argument("--lambda-min-ratio", type=float, help="smallest lambda as a fraction of lambda_max")
    g.add_argument("--cd-tol", type=float, help="coordinate descent tolerance")
    g.add_argument("--max-lla-iters", type=int, help="cap on reweighted solves per lambda")
    g.add_argument("--max-cd-iters", type=int, help="cap on coordinate descent sweeps")


def _add_sim_flags(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("config", nargs="?", help="SimConfig JSON file (or a manifest.json)")
    src.add_argument("--preset", choices=sorted(PRESETS), help="embedded configuration")
    p.add_argument("--seed", type=int, help=f"base seed (default {DEFAULT_SEED})")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--n-reps", dest="n_reps", type=int, help="number of replications")
    p.add_argument("--alpha-level", type=float, help="test level")
    p.add_argument("--c1", type=float, help="override the exposure-to-mediator multiplier")
    p.add_argument("--c2", type=float, help="override the direct effect")
    p.add_argument("--methods", help="comma-separated subset of: penalized, oracle (default both)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hdmed", description=__doc__.split("\n")[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter,
                                 epilog=__doc__.split("\n", 1)[1])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a mediation model to CSV data and run both tests")
    f.add_argument("data", help="CSV with header; columns y, x*, m* unless --roles is given")
    f.add_argument("--roles", help='JSON {"y": name, "x": [...], "m": [...]}')
    f.add_argument("--intercept", dest="intercept", action="store_true", default=True,
                   help="add an unpenalized intercept (default)")
    f.add_argument("--no-intercept", dest="intercept", action="store_false")
    f.add_argument("--alpha-level", type=float, default=0.05)
    _add_solver_flags(f)

    s = sub.add_parser("simulate", help="Monte Carlo replications of the simulation design")
    _add_sim_flags(s)
    _add_solver_flags(s)

    w = sub.add_parser("power", help="empirical and asymptotic power over a c1 or c2 sweep")
    _add_sim_flags(w)
    w.add_argument("--sweep", choices=("c1", "c2"),
                   help="parameter to sweep (or a 'sweep' entry in the config)")
    w.add_argument("--values", help="comma-separated sweep values")
    w.add_argument("--start", type=float)
    w.add_argument("--stop", type=float)
    w.add_argument("--step", type=float)
    _add_solver_flags(w)

    for p in (f, s, w):
        p.add_argument("--out", required=True, help="output directory (created atomically)")
        p.add_argument("--overwrite", action="store_true", help="replace an existing --out")
    return ap


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "power": cmd_power}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except (UsageError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DegenerateFitError, DegenerateVarianceError, SingularDesignError) as exc:
        print(f"degenerate fit: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except Exception as exc:  # pragma: no cover
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
