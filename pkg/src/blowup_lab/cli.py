"""Command-line front end.

    blowup-lab model1 run   --K 1.0 --t-end 1e6 --tol 1e-9 --out run1/
    blowup-lab model1 sweep --K 1.0,1.15,1.3 --out sweep/
    blowup-lab model2 run   --delta 0.01 --L 50 --nx 256 --ny 256 --stop-Q 1e6 --out run2/
    blowup-lab report run1/

Exit codes: 0 ok (including blow-up), 1 invariant violation, 2 configuration
error, 3 numerical failure. Summaries are computed from the CSV files as
written, so every number in them can be recomputed from the files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import boundary_layer as bl
from . import profile_model as pm
from .diagnostics import TimeSeries, boundedness_window, extrapolate_blowup, fit_power_law
from .errors import (BlowupLabError, ConfigError, DomainError, InsufficientData, NoBlowupTrend,
                     NumericalFailure)

logger = logging.getLogger("blowup_lab")

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

MODEL1_COLUMNS = ("A", "B", "dA", "dB", "regime", "core_margin", "ratio_margin",
                  "ineq1_margin", "ineq2_margin")
MODEL2_COLUMNS = bl.SERIES_COLUMNS
TIMESERIES = "timeseries.csv"
AUDIT = "audit.csv"
SUMMARY = "summary.json"

# flag defaults; a JSON config may set any of these, flags on the command line win
MODEL1_DEFAULTS = {
    "K": 1.0, "t_end": 1e6, "tol": pm.DEFAULT_ODE_TOL, "per_decade": 64, "t_first": 1e-8,
    "k": None, "fit_window": None, "band_window": None, "jobs": 1,
}
MODEL2_DEFAULTS = {
    "delta": 0.01, "L": 50.0, "nx": 256, "ny": 256, "stop_Q": 1e6, "t_max": bl.T_MAX,
    "dt0": 1e-3, "dt_max": bl.DT_MAX, "threshold": 0.1, "D_cap": bl.D_CAP, "workers": 1,
    "refine": 1, "x2_min_cell": bl.X2_MIN_CELL, "rise_fraction": bl.X1_RISE_FRACTION,
}
PLATEAU_TOL = 1e-6
VORTICITY_TOL = 1e-3


class _Failure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ----------------------------------------------------------------------------
# configuration


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _window(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    return vals[0], vals[1]


def _load_config(path: Optional[str], defaults: dict, command: str) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if not isinstance(data, dict):
        raise ConfigError("config must be a flat JSON object")
    unknown = sorted(set(data) - set(defaults) - {"out"})
    if unknown:
        raise ConfigError(f"unknown keys for {command}: {', '.join(unknown)}")
    return data


def _merge(args: argparse.Namespace, defaults: dict, command: str) -> dict:
    cfg = dict(defaults)
    cfg.update(_load_config(args.config, defaults, command))
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    out = args.out if args.out is not None else cfg.get("out")
    if out is None:
        raise ConfigError("an output directory is required (--out)")
    cfg["out"] = str(out)
    return cfg


def _jsonable(v: Any):
    if isinstance(v, float):
        return v if math.isfinite(v) else None
    if isinstance(v, (np.floating, np.integer)):
        return _jsonable(v.item())
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _write_json(path: Path, data: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ----------------------------------------------------------------------------
# model 1


def _model1_config(cfg: dict) -> None:
    K, t_end, tol = cfg["K"], cfg["t_end"], cfg["tol"]
    if not (isinstance(K, (int, float)) and K > 0 and math.isfinite(K)):
        raise ConfigError(f"K must be positive (got {K})")
    if not t_end > 0:
        raise ConfigError(f"t_end must be positive (got {t_end})")
    if not tol > 0:
        raise ConfigError(f"tol must be positive (got {tol})")
    if int(cfg["per_decade"]) < 1:
        raise ConfigError("per_decade must be at least 1")
    if cfg["k"] is not None and not 1.0 < cfg["k"] < pm.k_upper_bound(K):
        raise ConfigError(f"k must lie in (1, {pm.k_upper_bound(K):.6g}) for K={K}")


def _audit_rows(reports: Sequence[pm.AuditReport]) -> list[list[str]]:
    return [["%.17g" % r.time, r.check_name, "%.17g" % r.margin, str(int(r.violated)),
             str(int(r.applicable))] for r in reports]


def summarize_model1(series: TimeSeries, K: float, t_end: float, fit_window=None,
                     band_window=None) -> dict:
    """Diagnostics of a profile run computed from its time series."""
    out: dict = {}
    fit_window = fit_window or (t_end / 100.0, t_end)
    band_window = band_window or (t_end / 1000.0, t_end)
    try:
        fit = fit_power_law(series, "B", fit_window)
        out["B_exponent"] = asdict(fit)
    except (InsufficientData, ValueError) as exc:
        out["B_exponent"] = None
        out["B_exponent_error"] = str(exc)
    out["B_exponent_target"] = 1.0 / (2.0 - K) if K < 2 else None
    try:
        band = boundedness_window(series, lambda s: s["A"] - K / 3.0 * np.log(s["B"]), band_window)
        out["A_minus_K3_logB"] = {
            "window": list(band_window), "sup": band.sup, "inf": band.inf,
            "spread": band.spread, "max_decade_drift": band.max_drift,
            "decade_total_variation": band.total_variation,
            "decade_means": [list(m) for m in band.decade_means],
        }
    except (InsufficientData, ValueError) as exc:
        out["A_minus_K3_logB"] = None
        out["A_minus_K3_logB_error"] = str(exc)
    return out


def run_model1(cfg: dict) -> int:
    """One profile-model run into ``cfg['out']``; returns the exit code."""
    _model1_config(cfg)
    K, t_end = float(cfg["K"]), float(cfg["t_end"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    plan = pm.SamplePlan(int(cfg["per_decade"]), float(cfg["t_first"]))
    run = pm.integrate(K, t_end, float(cfg["tol"]), plan)
    k = cfg["k"] if cfg["k"] is not None else pm.default_k(K)
    reports = pm.audit_trajectory(run, k)
    margins = pm.sample_margins(run, reports)
    s = run.series
    cols = {name: s[name] for name in ("A", "B", "dA", "dB", "regime")}
    cols.update({f"{name}_margin": margins[name] for name in ("core", "ratio", "ineq1", "ineq2")})
    TimeSeries(s.t, **cols).to_csv(out / TIMESERIES, MODEL1_COLUMNS)
    with open(out / AUDIT, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time", "check_name", "margin", "violated", "applicable"])
        writer.writerows(_audit_rows(reports))

    violations: dict[str, int] = {}
    for r in reports:
        if r.violated:
            violations[r.check_name] = violations.get(r.check_name, 0) + 1
    series = TimeSeries.from_csv(out / TIMESERIES)
    summary = {
        "model": "profile",
        "K": K, "t_end": t_end, "ode_tol": float(cfg["tol"]), "k": k,
        "audit_mode": "validated" if run.validated else "exploratory",
        "status": "violation" if violations else "ok",
        "samples": len(series), "steps": run.steps, "rhs_evaluations": run.nfev,
        "rejected_steps": run.rejected,
        "transition": None if run.transition is None else {
            "t0": run.transition.t0, "A": run.transition.state.A, "B": run.transition.state.B,
        },
        "violations": violations,
        "violation_count": sum(violations.values()),
        "final": {"t": float(series.t[-1]), "A": float(series["A"][-1]),
                  "B": float(series["B"][-1])},
    }
    summary.update(summarize_model1(series, K, t_end, cfg["fit_window"], cfg["band_window"]))
    _write_json(out / SUMMARY, summary)
    logger.info("K=%g done: %s, %d violations", K, summary["status"], summary["violation_count"])
    return EXIT_VIOLATION if violations else EXIT_OK


def _sweep_one(cfg: dict) -> tuple[float, int, Optional[str]]:
    try:
        return cfg["K"], run_model1(cfg), None
    except ConfigError as exc:
        return cfg["K"], EXIT_CONFIG, str(exc)
    except NumericalFailure as exc:
        return cfg["K"], EXIT_NUMERICAL, str(exc)


def run_sweep(cfg: dict, Ks: Sequence[float]) -> int:
    """One run per K in its own subdirectory, plus a combined summary."""
    if not Ks:
        raise ConfigError("sweep needs at least one K")
    base = Path(cfg["out"])
    base.mkdir(parents=True, exist_ok=True)
    jobs = []
    for K in Ks:
        c = dict(cfg, K=float(K), out=str(base / f"K={K:g}"))
        _model1_config(c)
        jobs.append(c)
    if int(cfg["jobs"]) > 1:
        with ProcessPoolExecutor(max_workers=int(cfg["jobs"])) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(c) for c in jobs]
    rows = []
    for K, code, err in results:
        row: dict = {"K": K, "exit_code": code, "dir": f"K={K:g}"}
        if err is None:
            with open(base / row["dir"] / SUMMARY) as fh:
                summ = json.load(fh)
            fit = summ.get("B_exponent")
            row["B_exponent"] = fit["exponent_or_slope"] if fit else None
            row["B_exponent_target"] = summ["B_exponent_target"]
            row["violation_count"] = summ["violation_count"]
        else:
            row["error"] = err
        rows.append(row)
    exps = [r.get("B_exponent") for r in rows]
    order = np.argsort(Ks)
    ordered = [exps[i] for i in order]
    monotone = all(e is not None for e in ordered) and all(
        b > a for a, b in zip(ordered, ordered[1:]))
    _write_json(base / "sweep.json", {"runs": rows, "exponent_increasing_in_K": monotone})
    return max(code for _, code, _ in results)


# ----------------------------------------------------------------------------
# model 2


def _model2_init(cfg: dict) -> tuple[bl.InitialData, bl.StepControl]:
    init = bl.InitialData(float(cfg["delta"]), float(cfg["L"]))
    if float(cfg["delta"]) * float(cfg["L"]) >= 1.0:
        raise ConfigError("need delta * L < 1")
    control = bl.StepControl(float(cfg["dt0"]), float(cfg["threshold"]),
                             dt_max=float(cfg["dt_max"]))
    for key in ("nx", "ny", "workers", "refine"):
        if int(cfg[key]) < 1:
            raise ConfigError(f"{key} must be at least 1")
    if int(cfg["nx"]) < 16 or int(cfg["ny"]) < 16:
        raise ConfigError("nx and ny must be at least 16")
    if not (cfg["stop_Q"] > 0 and cfg["t_max"] > 0 and cfg["D_cap"] > 1):
        raise ConfigError("stop_Q and t_max must be positive and D_cap must exceed 1")
    return init, control


def summarize_model2(series: TimeSeries) -> dict:
    """Blow-up extrapolation from a boundary-layer time series."""
    try:
        t_star, fit = extrapolate_blowup(series, "Q")
        return {"T_star": t_star, "fit": asdict(fit)}
    except (NoBlowupTrend, InsufficientData, ValueError) as exc:
        return {"T_star": None, "fit": None, "fit_error": str(exc)}


def _model2_level(init, control, cfg: dict, nx: int, ny: int, out: Path) -> tuple[dict, bool]:
    out.mkdir(parents=True, exist_ok=True)
    result = bl.run(init, nx, ny, control, Q_max=float(cfg["stop_Q"]), t_max=float(cfg["t_max"]),
                    D_cap=float(cfg["D_cap"]), workers=int(cfg["workers"]),
                    x2_min_cell=float(cfg["x2_min_cell"]),
                    rise_fraction=float(cfg["rise_fraction"]))
    result.series.to_csv(out / TIMESERIES, MODEL2_COLUMNS)
    series = TimeSeries.from_csv(out / TIMESERIES)
    checks = {
        "plateau_error": result.plateau_error,
        "plateau_ok": result.plateau_error <= PLATEAU_TOL,
        "vorticity_error": result.vorticity_error,
        "vorticity_ok": result.vorticity_error <= VORTICITY_TOL,
        "box_violations": result.box_violations,
        "structural": asdict(result.structural),
    }
    violated = (not checks["plateau_ok"] or not checks["vorticity_ok"]
                or result.box_violations > 0 or result.structural.total > 0)
    summary = {
        "model": "boundary_layer",
        "delta": init.delta, "L": init.L, "nx": nx, "ny": ny,
        "threshold": control.threshold, "dt0": control.dt0, "dt_max": control.dt_max,
        "rise_fraction": float(cfg["rise_fraction"]),
        "status": result.status, "steps": result.steps, "rejected_steps": result.rejected,
        "final": {"t": float(series.t[-1]), "Q": float(series["Q"][-1]),
                  "D": float(series["D"][-1]), "J": float(series["J"][-1]),
                  "E": float(series["E"][-1])},
        "grid": result.summary_grid,
        "audits": checks,
        "invariants_ok": not violated,
    }
    summary.update(summarize_model2(series))
    _write_json(out / SUMMARY, summary)
    return summary, violated


def run_model2(cfg: dict) -> int:
    """Boundary-layer run, optionally repeated on refined grids."""
    init, control = _model2_init(cfg)
    base = Path(cfg["out"])
    nx, ny = int(cfg["nx"]), int(cfg["ny"])
    summary, violated = _model2_level(init, control, cfg, nx, ny, base)
    levels = int(cfg["refine"])
    if levels > 1:
        study = [{"nx": nx, "ny": ny, "threshold": control.threshold,
                  "T_star": summary["T_star"], "dir": "."}]
        for lev in range(1, levels):
            f = 2**lev
            ctl = replace(control, threshold=control.threshold / f)
            sub, v = _model2_level(init, ctl, cfg, nx * f, ny * f, base / f"refine_{lev}")
            violated = violated or v
            study.append({"nx": nx * f, "ny": ny * f, "threshold": ctl.threshold,
                          "T_star": sub["T_star"], "dir": f"refine_{lev}"})
        for a, b in zip(study, study[1:]):
            if a["T_star"] is not None and b["T_star"] is not None:
                b["rel_change_T_star"] = abs(b["T_star"] - a["T_star"]) / abs(a["T_star"])
            else:
                b["rel_change_T_star"] = None
        summary["refinement"] = study
        _write_json(base / SUMMARY, summary)
    logger.info("model2 %s, T*=%s", summary["status"], summary["T_star"])
    return EXIT_VIOLATION if violated else EXIT_OK


# ----------------------------------------------------------------------------
# report


def run_report(run_dir: str) -> int:
    from .plotting import plot_b_loglog, plot_inverse_q

    base = Path(run_dir)
    summ_path, ts_path = base / SUMMARY, base / TIMESERIES
    if not (summ_path.is_file() and ts_path.is_file()):
        raise ConfigError(f"{base} does not contain {SUMMARY} and {TIMESERIES}")
    with open(summ_path) as fh:
        summary = json.load(fh)
    series = TimeSeries.from_csv(ts_path)
    model = summary.get("model")
    if model == "profile":
        from .diagnostics import FitResult

        fit = summary.get("B_exponent")
        fr = None if fit is None else FitResult(fit["exponent_or_slope"], fit["intercept"],
                                                fit["r_squared"], tuple(fit["window"]),
                                                fit["n_points"])
        path = plot_b_loglog(series, fr, base / "B_loglog.svg", float(summary["K"]))
    elif model == "boundary_layer":
        t_star, fit = None, None
        try:
            t_star, fit = extrapolate_blowup(series, "Q")
        except (NoBlowupTrend, InsufficientData, ValueError) as exc:
            logger.warning("no extrapolated root: %s", exc)
        path = plot_inverse_q(series, fit, t_star, base / "invQ.svg")
    else:
        raise ConfigError(f"unknown model {model!r} in {summ_path}")
    print(path)
    return EXIT_OK


# ----------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blowup-lab",
                                     description="Profile and boundary-layer blow-up models.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    m1 = sub.add_parser("model1", help="nonlocal profile ODE").add_subparsers(dest="action",
                                                                            required=True)
    for name in ("run", "sweep"):
        p = m1.add_parser(name)
        if name == "run":
            p.add_argument("--K", type=float)
        else:
            p.add_argument("--K", type=_floats, required=True, help="comma-separated values")
            p.add_argument("--jobs", type=int, help="concurrent runs")
        p.add_argument("--t-end", dest="t_end", type=float)
        p.add_argument("--tol", type=float, help="integrator tolerance")
        p.add_argument("--per-decade", dest="per_decade", type=int)
        p.add_argument("--t-first", dest="t_first", type=float)
        p.add_argument("--k", type=float, help="exponent for the second profile bound")
        p.add_argument("--fit-window", dest="fit_window", type=_window)
        p.add_argument("--band-window", dest="band_window", type=_window)
        p.add_argument("--config")
        p.add_argument("--out")

    m2 = sub.add_parser("model2", help="boundary-layer model").add_subparsers(dest="action",
                                                                            required=True)
    p = m2.add_parser("run")
    p.add_argument("--delta", type=float)
    p.add_argument("--L", type=float)
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--stop-Q", dest="stop_Q", type=float)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--dt0", type=float)
    p.add_argument("--dt-max", dest="dt_max", type=float, help="ceiling for step growth")
    p.add_argument("--threshold", type=float, help="largest relative change of D per step")
    p.add_argument("--D-cap", dest="D_cap", type=float)
    p.add_argument("--workers", type=int, help="threads for the J quadrature")
    p.add_argument("--refine", type=int, help="number of grid levels")
    p.add_argument("--x2-min-cell", dest="x2_min_cell", type=float)
    p.add_argument("--rise-fraction", dest="rise_fraction", type=float,
                   help="share of x1 labels on the rising shoulder (0 = uniform)")
    p.add_argument("--config")
    p.add_argument("--out")

    rep = sub.add_parser("report", help="render SVG figures for a run directory")
    rep.add_argument("run_dir")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "model1":
            if args.action == "run":
                return run_model1(_merge(args, MODEL1_DEFAULTS, "model1"))
            Ks = args.K
            args.K = None
            return run_sweep(_merge(args, MODEL1_DEFAULTS, "model1"), Ks)
        if args.command == "model2":
            return run_model2(_merge(args, MODEL2_DEFAULTS, "model2"))
        return run_report(args.run_dir)
    except (ConfigError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BlowupLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
