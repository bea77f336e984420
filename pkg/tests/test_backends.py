"""Compiled and pure-Python kernels must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpcausal._backend import available_backends

BACKENDS = available_backends()
needs_both = pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")


def _problem(seed, n=80):
    rng = np.random.default_rng(seed)
    pi = rng.uniform(0.1, 0.9, n)
    t = (rng.random(n) < pi).astype(float)
    t[:2] = 1.0
    rows = t == 1
    y = 3 + rng.normal(0, 1.2, rows.sum())
    y[rng.random(y.size) < 0.1] += 15
    return dict(
        y=y, bw=1 / pi[rows], u=3 + rng.normal(0, 0.5, n), v2=np.full(n, 0.72),
        w2=(t - pi) / pi, coef=-(t - pi) / (n * pi), n=n,
    )


@needs_both
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.0, 0.1, 0.5, 1.0]))
def test_solvers_agree(seed, gamma):
    p = _problem(seed)
    out = {}
    for name, k in BACKENDS.items():
        mu0 = k.weighted_median(p["y"], p["bw"])
        ipw = k.dp_ipw_solve(p["y"], p["bw"], gamma, mu0, -1.0, 1e-10, 500, 1e-6)
        dr = k.dp_dr_solve(
            p["y"], p["bw"], p["u"], p["v2"], p["w2"], gamma, mu0, -1.0, 1e-10, 500, 1e-6,
            p["bw"] / p["n"], p["coef"], 0.5,
        )
        out[name] = (mu0, ipw, dr)
    a, b = out["compiled"], out["python"]
    assert a[0] == b[0]
    assert abs(a[1][0] - b[1][0]) < 1e-10 and a[1][2] == b[1][2]
    assert abs(a[2][0] - b[2][0]) < 1e-10 and a[2][2] == b[2][2]


@needs_both
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(-3, 3), st.floats(0.2, 3), st.floats(0, 2))
def test_moments_agree(seed, mu, sigma, gamma):
    rng = np.random.default_rng(seed)
    u, v2 = rng.normal(size=20), rng.uniform(0.01, 3, 20)
    a = BACKENDS["compiled"].cond_moments(u, v2, mu, sigma, gamma)
    b = BACKENDS["python"].cond_moments(u, v2, mu, sigma, gamma)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-12, atol=1e-14)


@needs_both
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.booleans())
def test_dr_root_agrees(seed, folded):
    p = _problem(seed)
    k = {n: m for n, m in BACKENDS.items()}
    obs = np.abs(p["y"] - 3.0) if folded else p["y"]
    args = (obs, p["bw"] / p["n"], p["coef"], p["u"], np.sqrt(p["v2"]), 3.0, folded, 0.5)
    a = k["compiled"].dr_root(*args)
    b = k["python"].dr_root(*args)
    assert abs(a[0] - b[0]) < 1e-10 and bool(a[1]) == bool(b[1])


def _backend_of(env_value):
    env = {**os.environ, "DPCAUSAL_BACKEND": env_value}
    return subprocess.run(
        [sys.executable, "-c", "import dpcausal; print(dpcausal.BACKEND)"],
        env=env, capture_output=True, text=True,
    )


def test_env_selects_python_backend():
    r = _backend_of("python")
    assert r.returncode == 0 and r.stdout.strip() == "python"


def test_env_rejects_unknown_backend():
    r = _backend_of("fortran")
    assert r.returncode != 0 and "DPCAUSAL_BACKEND" in r.stderr


@needs_both
def test_estimates_identical_end_to_end():
    code = (
        "from dpcausal.simulation import *\n"
        "from dpcausal.config import parse_estimator\n"
        "s = ScenarioConfig('s', DgpConfig(), ContaminationConfig('homogeneous', 0.1),"
        " estimators=tuple(parse_estimator(t).config for t in ['dp_ipw:0.5', 'dp_dr:1.0']),"
        " reps=3, master_seed=9)\n"
        "for r in run_reps(s, 1): print(repr(r.estimate))\n"
    )
    outs = []
    for b in ("compiled", "python"):
        env = {**os.environ, "DPCAUSAL_BACKEND": b}
        r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        outs.append([float(v) for v in r.stdout.split()])
    np.testing.assert_allclose(outs[0], outs[1], atol=1e-10, rtol=0)
