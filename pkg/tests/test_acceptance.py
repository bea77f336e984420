"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (printed in the terminal summary).
Simulation criteria use the bundled configs and their master seed 2024
at 2,000 replicates; the whole module runs in a few minutes on one core.

    python3 -m pytest tests/test_acceptance.py -v
"""

import csv
import os
from dataclasses import replace
from importlib.resources import files

import numpy as np
import pytest

from conftest import make_data, oracle_quad_moments
from dpcausal.cli import main
from dpcausal.config import load_config
from dpcausal.data import build_design
from dpcausal.diagnostics import bias_probe, sensitivity_curve
from dpcausal.estimators import (
    EstimatorConfig,
    Nuisances,
    cond_moments,
    estimate,
    fit_nuisances,
    naive_ipw,
)
from dpcausal.outcome import OutcomePrediction, fit_dp_unnormalized
from dpcausal.simulation import (
    CORRECT_SPEC,
    ContaminationConfig,
    DgpConfig,
    contaminate,
    generate,
    run_scenario,
    stream,
)
from dpcausal.weighting import WeightDensity, dp_psi

CONFIGS = files("dpcausal") / "configs"
REPS = 2000


def _scenarios(name, ids=None, labels=None):
    scen, _ = load_config(str(CONFIGS / f"{name}.config"))
    out = []
    for s in scen:
        if ids is not None and s.scenario_id not in ids:
            continue
        ests = s.estimators if labels is None else tuple(e for e in s.estimators if labels(e))
        out.append(replace(s, estimators=ests, reps=REPS))
    return out


def _within(value, target, tol):
    return abs(value - target) <= tol


@pytest.fixture(scope="module")
def table2():
    keep = {"naive_ipw", "firpo_median", "dp_ipw:0.5"}
    scen = _scenarios("table2", {"clean", "hom05", "hom10", "hom20"}, lambda e: e.label in keep)
    return {s.scenario_id: run_scenario(s)[1] for s in scen}


@pytest.fixture(scope="module")
def table3_hom20():
    scen = _scenarios(
        "table3_ft", {"hom20"}, lambda e: e.gamma == 1.0 and e.kind in ("dp_dr", "eps_dp_dr")
    )
    return run_scenario(scen[0])[1]


@pytest.mark.slow
def test_c01_table2_reproduction(table2, report):
    cells = [
        ("naive IPW clean", table2["clean"].get("naive_ipw").rmse, 0.222, 0.02),
        ("naive IPW hom eps=0.2", table2["hom20"].get("naive_ipw").rmse, 3.153, 0.10),
        ("Firpo median hom eps=0.1", table2["hom10"].get("firpo_median").rmse, 0.367, 0.04),
        ("DP-IPW g=0.5 hom eps=0.1", table2["hom10"].get("dp_ipw:0.5").rmse, 0.272, 0.03),
    ]
    ok = all(_within(v, t, tol) for _, v, t, tol in cells)
    detail = "; ".join(f"{n} rmse {v:.3f} (target {t} +- {tol})" for n, v, t, tol in cells)
    assert report("1", ok, detail), detail


@pytest.mark.slow
def test_c02_ordering(table2, report):
    parts, ok = [], True
    for sid in ("hom05", "hom10", "hom20"):
        s = table2[sid]
        dp, fm, nv = (s.get(k).rmse for k in ("dp_ipw:0.5", "firpo_median", "naive_ipw"))
        ok &= dp < fm < nv
        parts.append(f"{sid}: {dp:.3f} < {fm:.3f} < {nv:.3f}")
    assert report("2", ok, "; ".join(parts)), parts


@pytest.mark.slow
def test_c03_dr_ft_gap(table3_hom20, report):
    dp = table3_hom20.get("dp_dr:1")
    eps = table3_hom20.get("eps_dp_dr:1@known=0.2")
    ok = _within(eps.rmse, 0.243, 0.03) and _within(dp.rmse, 0.273, 0.03) and eps.rmse < dp.rmse
    detail = f"eps-DP-DR rmse {eps.rmse:.3f} (0.243 +- 0.03), DP-DR rmse {dp.rmse:.3f} (0.273 +- 0.03)"
    assert report("3", ok, detail), detail


@pytest.mark.slow
def test_c04_bias_correction(table3_hom20, report):
    dp = table3_hom20.get("dp_dr:1").mean
    eps = table3_hom20.get("eps_dp_dr:1@known=0.2").mean
    ok = 2.85 <= dp <= 2.94 and 2.97 <= eps <= 3.04
    detail = f"DP-DR mean {dp:.3f} in [2.85, 2.94], eps-DP-DR mean {eps:.3f} in [2.97, 3.04]"
    assert report("4", ok, detail), detail


@pytest.mark.slow
def test_c05_cauchy(report):
    s = _scenarios("cauchy", {"gaussian_x"}, lambda e: e.label in ("naive_ipw", "dp_ipw:0.5"))[0]
    summ = run_scenario(s)[1]
    dp, nv = summ.get("dp_ipw:0.5").rmse, summ.get("naive_ipw").rmse
    ok = _within(dp, 0.367, 0.05) and nv > 10
    detail = f"DP-IPW g=0.5 rmse {dp:.3f} (0.367 +- 0.05), naive IPW rmse {nv:.1f} (> 10)"
    assert report("5", ok, detail), detail


def test_c06_equivalences(report):
    worst = [0.0, 0.0, 0.0]
    for seed in range(10):
        ds, mask = make_data(n=150, eps=0.1, seed=100 + seed)
        nuis = fit_nuisances(ds, CORRECT_SPEC, CORRECT_SPEC, or_method="mle")
        ref = naive_ipw(ds, nuis.pi_hat).mu_hat
        a = estimate(ds, nuis, EstimatorConfig("dp_ipw", gamma=0.0, sigma_fixed=1.0)).mu_hat
        worst[0] = max(worst[0], abs(a - ref))
        pred = nuis.outcome[1]
        zero_eps = Nuisances(nuis.pi_hat, {1: OutcomePrediction(pred.u, pred.v2, 0.0)})
        for g in (0.1, 0.5, 1.0):
            e = estimate(ds, zero_eps, EstimatorConfig("eps_dp_dr", gamma=g, eps_mode="estimated")).mu_hat
            d = estimate(ds, zero_eps, EstimatorConfig("dp_dr", gamma=g)).mu_hat
            worst[1] = max(worst[1], abs(e - d))
            za = estimate(ds, nuis, EstimatorConfig("dp_dr", gamma=g, sigma_fixed=1.3, zero_augmentation=True)).mu_hat
            ip = estimate(ds, nuis, EstimatorConfig("dp_ipw", gamma=g, sigma_fixed=1.3)).mu_hat
            worst[2] = max(worst[2], abs(za - ip))
    ok = max(worst) <= 1e-10
    detail = (
        f"max |DP-IPW(g=0, fixed sigma) - naive IPW| {worst[0]:.1e}; "
        f"max |eps-DP-DR(eps_hat=0) - DP-DR| {worst[1]:.1e}; "
        f"max |DP-DR(no augmentation) - DP-IPW| {worst[2]:.1e} (all <= 1e-10)"
    )
    assert report("6", ok, detail), detail


def test_c07_quadrature(report):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        u, v2 = rng.uniform(-5, 5), rng.uniform(0.01, 5)
        mu, sigma, gamma = rng.uniform(-5, 5), rng.uniform(0.2, 5), rng.uniform(0, 2)
        m0, m1 = cond_moments(np.array([u]), np.array([v2]), mu, sigma, gamma)
        q0, q1 = oracle_quad_moments(u, v2, mu, sigma, gamma)
        worst = max(worst, abs(m0[0] - q0), abs(m1[0] - q1))
    ok = worst <= 1e-8
    detail = f"max abs error over 1000 parameter sets {worst:.1e} (<= 1e-8)"
    assert report("7", ok, detail), detail


def _zero_cells():
    clean = ContaminationConfig()
    hom = ContaminationConfig("homogeneous", 0.1)
    cells = []
    for cont in (clean, hom):
        for kind in ("dp_ipw", "dp_dr", "eps_dp_dr"):
            for orc in ((True,) if kind == "dp_ipw" else (True, False)):
                cells.append((kind, cont, True, orc))
    cells += [("dp_dr", clean, False, True), ("eps_dp_dr", clean, False, True)]
    cells.append(("eps_dp_dr", hom, False, True))
    return cells


def test_c08_estimating_equation_probes(report):
    cells = _zero_cells()
    zs, ok = [], True
    for k, (kind, cont, ps, orc) in enumerate(cells):
        r = bias_probe(kind, cont, M=100_000, seed=k, ps_correct=ps, or_correct=orc)
        ok &= r.predicted in ("zero", "O(nu)") and abs(r.mc_mean) < 3 * r.mc_se
        zs.append(r.z)
    hom = ContaminationConfig("homogeneous", 0.1)
    neg = bias_probe("dp_dr", hom, M=100_000, seed=99, ps_correct=False, or_correct=True)
    ok &= neg.predicted == "negative" and neg.mc_mean < -3 * neg.mc_se
    detail = (
        f"{len(cells)} zero cells, max |z| {max(abs(z) for z in zs):.2f} (< 3); "
        f"DP-DR wrong PS / correct OR homogeneous z {neg.z:.1f} (< -3)"
    )
    assert report("8", ok, detail), detail


@pytest.mark.xfail(strict=True, reason="unattainable for small gamma; analysis in the decision ledger")
def test_c09a_profile_tail_threshold(report):
    worst = {}
    for g in (0.1, 0.25, 0.5, 1.0, 2.0):
        for sigma in (0.5, 1.0, 2.0):
            tail = abs(dp_psi(WeightDensity(0.0, sigma, g), [15 * sigma])[0]) / sigma
            worst[g] = max(worst.get(g, 0.0), tail)
    ok = all(v < 1e-12 for v in worst.values())
    detail = "max |psi(mu+15 sigma)|/sigma by gamma: " + ", ".join(
        f"{g:g}: {v:.1e}" for g, v in worst.items()
    ) + " (< 1e-12 required for gamma >= 0.1)"
    report("9a", ok, detail)
    assert ok, detail


def test_c09bc_sensitivity_curves(report):
    ds, _ = make_data(n=100, eps=0.1, seed=31)
    nuis = fit_nuisances(ds, CORRECT_SPEC)
    cfg = EstimatorConfig("dp_ipw", gamma=0.5)
    base = estimate(ds, nuis, cfg)
    grid = base.mu_hat + base.sigma_h * np.linspace(-15, 15, 601)
    curve = sensitivity_curve(cfg, ds, nuis, grid)
    peak = np.nanmax(np.abs(curve.values))
    far = abs(curve.values[-1])
    ok_b = far < 0.01 * peak and not curve.missing.any()
    detail_b = f"DP-IPW g=0.5 |curve(mu+15 sigma)| / peak = {far / peak:.1e} (< 0.01)"
    naive = sensitivity_curve(EstimatorConfig("naive_ipw"), ds, nuis, np.linspace(-30, 30, 121))
    slope, icpt = np.polyfit(naive.y0_grid, naive.values, 1)
    resid = naive.values - (slope * naive.y0_grid + icpt)
    r2 = 1 - np.sum(resid**2) / np.sum((naive.values - naive.values.mean()) ** 2)
    ok_c = r2 > 0.999
    detail_c = f"naive IPW affine fit R^2 = {r2:.6f} (> 0.999)"
    report("9b", ok_b, detail_b)
    report("9c", ok_c, detail_c)
    assert ok_b and ok_c, (detail_b, detail_c)


def test_c10_eps_recovery(report):
    hits, vals = 0, []
    for r in range(100):
        g = generate(DgpConfig(n=2000), stream(2024, r, 0))
        ds, _ = contaminate(g.dataset, ContaminationConfig("homogeneous", 0.1), stream(2024, r, 1), arm_means=g.truth)
        rows = ds.t == 1
        fit = fit_dp_unnormalized(build_design(ds, CORRECT_SPEC)[rows], ds.y[rows], gamma_or=0.5)
        vals.append(fit.eps_hat)
        hits += 0.05 <= fit.eps_hat <= 0.15
    ok = hits >= 95
    detail = f"{hits}/100 runs with eps_hat in [0.05, 0.15] (>= 95); range {min(vals):.3f}-{max(vals):.3f}"
    assert report("10", ok, detail), detail


def test_c11_thread_determinism(tmp_path, report):
    outs = []
    for threads in (1, 2, 3):
        d = tmp_path / f"t{threads}"
        code = main(["simulate", "table3_ft", "--out", str(d), "--reps", "12", "--threads", str(threads)])
        assert code == 0
        outs.append((d / "per_rep.csv").read_bytes())
    ok = outs[0] == outs[1] == outs[2]
    detail = "per_rep.csv byte-identical for --threads 1, 2, 3" if ok else "per_rep.csv differs across thread counts"
    assert report("11", ok, detail), detail


# -- optional real-data pipeline ------------------------------------------------

NHEFS = os.environ.get("DPCAUSAL_NHEFS")
CONTINUOUS = ("age", "smokeintensity", "smokeyrs", "wt71")
CATEGORICAL = {"education": (2, 3, 4, 5), "exercise": (1, 2), "active": (1, 2)}


def _prepare_nhefs(src, dst):
    with open(src, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r.get("wt82_71", "").strip() not in ("", "NA")]
    names = ["wt82_71", "qsmk", "sex", "race", *CONTINUOUS]
    names += [f"{k}_{v}" for k, levels in CATEGORICAL.items() for v in levels]
    with open(dst, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in rows:
            vals = [r["wt82_71"], r["qsmk"], r["sex"], r["race"], *(r[c] for c in CONTINUOUS)]
            vals += [int(float(r[k]) == v) for k, levels in CATEGORICAL.items() for v in levels]
            w.writerow(vals)
    return names[2:], len(rows)


@pytest.mark.skipif(not NHEFS, reason="set DPCAUSAL_NHEFS to the NHEFS csv to run")
def test_c12_nhefs_pipeline(tmp_path, capsys, report):
    prepared = tmp_path / "nhefs.csv"
    covs, n = _prepare_nhefs(NHEFS, prepared)
    cont = tmp_path / "nhefs_cont.csv"
    assert main(["contaminate", str(prepared), "--outcome", "wt82_71", "--fraction", "0.1",
                 "--outlier-mean", "100", "--outlier-sd", "5", "--seed", "1", "--out", str(cont)]) == 0
    capsys.readouterr()
    code = main(["estimate", str(cont), "--outcome", "wt82_71", "--treatment", "qsmk",
                 "--covariates", ",".join(covs), "--ps-quad", ",".join(CONTINUOUS),
                 "--estimator", "dp_ipw", "--gamma", "0.1"])
    out = capsys.readouterr().out
    ate = float(next(r for r in csv.reader(out.splitlines()) if r[0] == "ate")[1])
    ok = code == 0 and 3.0 <= ate <= 3.7
    detail = f"n={n}, ATE {ate:.3f} in [3.0, 3.7]"
    assert report("12", ok, detail), detail


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
