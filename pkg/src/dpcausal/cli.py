"""Command-line entry point: ``dpcausal simulate|estimate|contaminate|path|diagnose``.

Exit codes: 0 success, 2 usage or input error, 3 a simulation scenario
aborted, 4 an estimator failed.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import os
import sys
from dataclasses import replace
from importlib.resources import files

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .data import DataError, DesignSpec, load_csv
from .diagnostics import sensitivity_curve, write_curve_csv
from .estimators import (
    DR_KINDS,
    EPS_MODES,
    KINDS,
    EstimationError,
    EstimatorConfig,
    bootstrap_se,
    estimate,
    estimate_ate,
    fit_nuisances,
)
from .simulation import CONTAMINATE, draw_mask, gamma_path, run_scenario, stream

EXIT_OK, EXIT_USAGE, EXIT_SCENARIO, EXIT_ESTIMATE = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _resolve_config(path: str) -> str:
    if os.path.exists(path):
        return path
    bundled = files("dpcausal") / "configs" / (path if path.endswith(".config") else path + ".config")
    if bundled.is_file():
        return str(bundled)
    raise UsageError(f"config file not found: {path}")


# -- simulate ------------------------------------------------------------------------


def _table_label(est: EstimatorConfig, scenario) -> str:
    """Row label that does not vary with the scenario's own contamination ratio."""
    if est.kind == "eps_dp_dr" and est.eps_mode == "known" and est.eps_value == scenario.contamination.eps:
        return f"{est.kind}:{est.gamma:g}@known"
    return est.label


def cmd_simulate(args) -> int:
    start = _now()
    cfg_path = _resolve_config(args.config)
    scenarios, digest = load_config(cfg_path)
    if args.reps is not None:
        if args.reps < 1:
            raise UsageError("--reps must be positive")
        scenarios = [replace(s, reps=args.reps) for s in scenarios]
    os.makedirs(args.out, exist_ok=True)
    per_rep, summary, timing = [], [], []
    aborted = []
    summaries, kept = [], []
    for sc in scenarios:
        try:
            rows, summ = run_scenario(sc, threads=args.threads)
        except Exception as exc:  # noqa: BLE001 - reported through the exit code
            aborted.append(f"{sc.scenario_id}: {exc}")
            continue
        summaries.append(summ)
        kept.append(sc)
        for r in rows:
            per_rep.append((r.scenario_id, r.estimator, r.gamma, r.rep, r.estimate, r.converged,
                            r.iterations, r.sigma_h, r.flags, r.error))
            timing.append((r.scenario_id, r.estimator, r.rep, r.runtime_ms))
        for e in summ.estimators:
            summary.append((sc.scenario_id, e.estimator, e.gamma, summ.truth, e.mean, e.sd, e.rmse,
                            e.n_ok, e.n_failed, e.convergence_rate))
    outputs = {
        "per_rep.csv": (
            ["scenario_id", "estimator", "gamma", "rep", "estimate", "converged", "iterations",
             "sigma_h", "flags", "error"], per_rep),
        "summary.csv": (
            ["scenario_id", "estimator", "gamma", "truth", "mean", "sd", "rmse", "n_ok",
             "n_failed", "convergence_rate"], summary),
        "timing.csv": (["scenario_id", "estimator", "rep", "runtime_ms"], timing),
    }
    for name, (header, rows) in outputs.items():
        _write_table(os.path.join(args.out, name), header, rows)
    labels, cells = [], {}
    for sc, summ in zip(kept, summaries):
        for est, e in zip(sc.estimators, summ.estimators):
            lab = _table_label(est, sc)
            if lab not in labels:
                labels.append(lab)
            cells[(lab, summ.scenario_id)] = e.rmse
    table = [[lab] + [cells.get((lab, s.scenario_id), math.nan) for s in summaries] for lab in labels]
    _write_table(os.path.join(args.out, "rmse_table.csv"), ["estimator"] + [s.scenario_id for s in summaries], table)
    manifest = {
        "config": os.path.abspath(cfg_path),
        "config_digest": digest,
        "version": __version__,
        "master_seeds": {s.scenario_id: s.master_seed for s in scenarios},
        "start": start,
        "end": _now(),
        "outputs": sorted(list(outputs) + ["rmse_table.csv"]),
        "aborted": aborted,
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    for line in aborted:
        print(f"scenario aborted: {line}", file=sys.stderr)
    print(f"wrote {len(summary)} summary rows to {args.out}")
    return EXIT_SCENARIO if aborted else EXIT_OK


# -- data-driven commands ---------------------------------------------------------------


def _columns(raw):
    if raw is None:
        return None
    return [c.strip() for c in raw.split(",") if c.strip()]


def _load(args):
    covs = _columns(args.covariates) or []
    return load_csv(args.data, args.outcome, args.treatment, covs, header=not args.no_header)


def _spec(dataset, cols, quad) -> DesignSpec:
    names = list(dataset.column_names)

    def idx(c):
        if c in names:
            return names.index(c)
        try:
            return int(c)
        except ValueError:
            raise UsageError(f"unknown covariate {c!r}; covariates are {names}") from None

    sel = tuple(range(dataset.p)) if cols is None else tuple(idx(c) for c in cols)
    q = () if quad is None else tuple(idx(c) for c in quad)
    for j in sel + q:
        if not 0 <= j < dataset.p:
            raise UsageError(f"covariate index {j} out of range")
    return DesignSpec(sel, True, q)


def _estimator_config(args, arm=1, gamma=None) -> EstimatorConfig:
    g = args.gamma if gamma is None else gamma
    if g is not None and not g >= 0:
        raise UsageError(f"--gamma must be non-negative, got {g}")
    try:
        return EstimatorConfig(
            args.estimator,
            gamma=0.0 if g is None else g,
            eps_mode=args.eps_mode,
            eps_value=args.eps,
            arm=arm,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _nuisance_fn(args, dataset):
    ps = _spec(dataset, _columns(args.ps_cols), _columns(args.ps_quad))
    orc = None
    if args.estimator in DR_KINDS:
        orc = _spec(dataset, _columns(args.or_cols), _columns(args.or_quad))
    clip = None if args.no_clip else (args.clip_lo, args.clip_hi)

    def fit(ds):
        return fit_nuisances(ds, ps, orc, or_method=args.or_method, gamma_or=args.gamma_or, clip=clip)

    return fit


def _flag_set(args) -> str:
    return f"--estimator {args.estimator} --gamma {args.gamma} --eps-mode {args.eps_mode}"


def cmd_estimate(args) -> int:
    ds = _load(args)
    cfg = _estimator_config(args)
    fit = _nuisance_fn(args, ds)
    try:
        res = estimate_ate(ds, cfg, fit(ds))
    except (EstimationError, ValueError, RuntimeError) as exc:
        print(f"estimation failed ({_flag_set(args)}): {exc}", file=sys.stderr)
        return EXIT_ESTIMATE
    ses = {"mu1": "", "mu0": "", "ate": ""}
    if args.bootstrap:
        def make(which):
            def closure(d):
                r = estimate_ate(d, cfg, fit(d))
                return {"mu1": r.mu1.mu_hat, "mu0": r.mu0.mu_hat, "ate": r.ate}[which]
            return closure
        try:
            for q in ses:
                ses[q] = bootstrap_se(make(q), ds, args.bootstrap, args.seed).se
        except (EstimationError, ValueError) as exc:
            print(f"bootstrap failed ({_flag_set(args)}): {exc}", file=sys.stderr)
            return EXIT_ESTIMATE
    rows = [("mu1", res.mu1.mu_hat, ses["mu1"]), ("mu0", res.mu0.mu_hat, ses["mu0"]),
            ("ate", res.ate, ses["ate"])]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "estimate", "se"])
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    sys.stdout.write(buf.getvalue())
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(buf.getvalue())
    return EXIT_OK


def cmd_contaminate(args) -> int:
    if not 0.0 <= args.fraction < 1.0:
        raise UsageError(f"--fraction must lie in [0, 1), got {args.fraction}")
    if args.outlier_sd < 0:
        raise UsageError("--outlier-sd must be non-negative")
    if not os.path.exists(args.data):
        raise DataError(f"file not found: {args.data}")
    with open(args.data, newline="") as fh:
        lines = fh.read().splitlines(keepends=True)
    header = None if args.no_header else lines[0]
    body = lines if args.no_header else lines[1:]
    data_idx = [i for i, ln in enumerate(body) if ln.strip()]
    n = len(data_idx)
    if n == 0:
        raise DataError(f"{args.data}: no data rows")
    names = None if header is None else [h.strip() for h in next(csv.reader([header]))]
    if names is not None and args.outcome in names:
        col = names.index(args.outcome)
    else:
        try:
            col = int(args.outcome)
        except ValueError:
            raise DataError(f"missing outcome column {args.outcome!r}") from None
    rng = stream(args.seed, 0, CONTAMINATE)
    mask, z = draw_mask(np.full(n, args.fraction), args.fraction, args.scheme, rng)
    out_lines = [] if header is None else [header]
    for k, i in enumerate(data_idx):
        line = body[i]
        if not mask[k]:
            out_lines.append(line)
            continue
        ending = line[len(line.rstrip("\r\n")):] or "\n"
        fields = next(csv.reader([line.rstrip("\r\n")]))
        if col >= len(fields):
            raise DataError(f"row {k} has no column {col}")
        fields[col] = repr(float(args.outlier_mean + args.outlier_sd * z[k]))
        buf = io.StringIO()
        csv.writer(buf, lineterminator="").writerow(fields)
        out_lines.append(buf.getvalue() + ending)
    with open(args.out, "w", newline="") as fh:
        fh.write("".join(out_lines))
    mask_path = args.mask or os.path.splitext(args.out)[0] + "_mask.csv"
    _write_table(mask_path, ["row", "outlier"], [(k, int(m)) for k, m in enumerate(mask)])
    print(f"replaced {int(mask.sum())} of {n} rows; mask written to {mask_path}")
    return EXIT_OK


def _grid(text: str) -> list[float]:
    text = text.strip()
    if text.count(":") == 2:
        lo, hi, step = (float(v) for v in text.split(":"))
        if step <= 0:
            raise UsageError("grid step must be positive")
        k = int(math.floor((hi - lo) / step + 1e-9))
        return [round(lo + j * step, 12) for j in range(k + 1)]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse grid {text!r}") from None


def cmd_path(args) -> int:
    ds = _load(args)
    grid = _grid(args.grid)
    if any(g < 0 for g in grid):
        raise UsageError("gamma grid values must be non-negative")
    base = _estimator_config(args, arm=args.arm, gamma=0.0)
    try:
        nuis = _nuisance_fn(args, ds)(ds)
        path = gamma_path(ds, nuis, args.estimator, grid, base)
    except (EstimationError, ValueError, RuntimeError) as exc:
        print(f"path failed ({_flag_set(args)}): {exc}", file=sys.stderr)
        return EXIT_ESTIMATE
    rows = [(g, r.mu_hat, r.sigma_h, r.iterations, r.converged) for g, r in zip(path.gammas, path.results)]
    _write_table(args.out, ["gamma", "estimate", "sigma_h", "iterations", "converged"], rows)
    sp = "none" if path.stability_gamma is None else _fmt(path.stability_gamma)
    print(f"stability_gamma,{sp}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    ds = _load(args)
    cfg = _estimator_config(args, arm=args.arm)
    try:
        nuis = _nuisance_fn(args, ds)(ds)
        base = estimate(ds, nuis, cfg)
        grid = np.asarray(_grid(args.grid))
        if args.grid_units == "sigma":
            scale = base.sigma_h if math.isfinite(base.sigma_h) else float(np.std(ds.y))
            grid = base.mu_hat + grid * scale
        curve = sensitivity_curve(cfg, ds, nuis, grid, args.anchor, args.mode)
    except (EstimationError, RuntimeError) as exc:
        print(f"diagnose failed ({_flag_set(args)}): {exc}", file=sys.stderr)
        return EXIT_ESTIMATE
    write_curve_csv(args.out, curve.y0_grid, curve.values, ("y0", "sensitivity"))
    print(f"anchor_row,{curve.anchor_row}")
    print(f"missing,{int(curve.missing.sum())}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def _data_args(p):
    p.add_argument("data", help="input CSV")
    p.add_argument("--outcome", default="y")
    p.add_argument("--treatment", default="t")
    p.add_argument("--covariates", help="comma-separated covariate columns (names or indices)")
    p.add_argument("--no-header", action="store_true")


def _est_args(p):
    p.add_argument("--estimator", choices=KINDS, default="dp_ipw")
    p.add_argument("--gamma", type=float, default=0.5, help="robustness parameter of the dp kinds")
    p.add_argument("--eps-mode", choices=EPS_MODES, default="estimated")
    p.add_argument("--eps", type=float, default=0.0, help="contamination ratio for --eps-mode known")
    p.add_argument("--ps-cols", help="propensity covariates (default: all)")
    p.add_argument("--ps-quad", help="propensity covariates to add squared")
    p.add_argument("--or-cols", help="outcome-model covariates (default: all)")
    p.add_argument("--or-quad", help="outcome-model covariates to add squared")
    p.add_argument("--or-method", choices=("mle", "dp_unnormalized"), default="dp_unnormalized")
    p.add_argument("--gamma-or", type=float, default=0.5)
    p.add_argument("--clip-lo", type=float, default=0.01)
    p.add_argument("--clip-hi", type=float, default=0.99)
    p.add_argument("--no-clip", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpcausal", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the scenarios of a config file")
    p.add_argument("config", help="config path or bundled name (table2, table3_ft, cauchy)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--reps", type=int, help="override every scenario's replicate count")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: DPCAUSAL_THREADS or 1)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate mu1, mu0 and the ATE on a CSV")
    _data_args(p)
    _est_args(p)
    p.add_argument("--bootstrap", type=int, default=0, metavar="B")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("contaminate", help="replace a fraction of outcomes by outliers")
    p.add_argument("data")
    p.add_argument("--outcome", default="y")
    p.add_argument("--no-header", action="store_true")
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--outlier-mean", type=float, required=True)
    p.add_argument("--outlier-sd", type=float, default=1.0)
    p.add_argument("--scheme", choices=("exact_count", "bernoulli"), default="exact_count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--mask", help="mask CSV path (default: <out>_mask.csv)")
    p.set_defaults(func=cmd_contaminate)

    p = sub.add_parser("path", help="estimates over a gamma grid")
    _data_args(p)
    _est_args(p)
    p.add_argument("--grid", default="0:2:0.1", help="lo:hi:step or comma list")
    p.add_argument("--arm", type=int, choices=(0, 1), default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("diagnose", help="empirical sensitivity curve")
    _data_args(p)
    _est_args(p)
    p.add_argument("--grid", default="-20:20:0.5", help="y0 grid, lo:hi:step or comma list")
    p.add_argument("--grid-units", choices=("absolute", "sigma"), default="sigma",
                   help="sigma: grid is mu_hat + value * sigma_hat")
    p.add_argument("--mode", choices=("add_one", "replace_one"), default="add_one")
    p.add_argument("--anchor", type=int, default=None)
    p.add_argument("--arm", type=int, choices=(0, 1), default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
