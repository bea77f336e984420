import math

import numpy as np
import pytest
from scipy import integrate
from scipy.optimize import brentq
from scipy.special import expit

from dpcausal.data import validate_dataset
from dpcausal.estimators import Nuisances
from dpcausal.outcome import OutcomePrediction
from dpcausal.simulation import ContaminationConfig, DgpConfig, contaminate, generate, stream


def make_data(n=200, eps=0.1, seed=0, mode="homogeneous", error="gaussian"):
    dgp = DgpConfig(n=n, error=error)
    g = generate(dgp, stream(seed, 0, 0))
    cont = ContaminationConfig(mode if eps > 0 else "none", eps)
    ds, mask = contaminate(g.dataset, cont, stream(seed, 0, 1), arm_means=g.truth)
    return ds, mask


def true_nuisances(ds):
    x1, x2 = ds.x[:, 0], ds.x[:, 1]
    pi = expit(0.8 * x1 + 0.2 * x2)
    base = 1.2 * x1 + 0.3 * x2
    out = {
        1: OutcomePrediction(3.0 + base, np.full(ds.n, 0.72)),
        0: OutcomePrediction(0.0 + base, np.full(ds.n, 0.72)),
    }
    return Nuisances(pi, out)


@pytest.fixture
def contaminated():
    ds, mask = make_data(n=300, eps=0.1, seed=5)
    return ds, true_nuisances(ds), mask


@pytest.fixture
def clean():
    ds, _ = make_data(n=300, eps=0.0, seed=6)
    return ds, true_nuisances(ds)


@pytest.fixture
def tiny():
    y = [1.0, 2.0, 3.0, 4.0, 10.0, 0.5, 1.5, 2.5]
    t = [1, 1, 1, 1, 1, 0, 0, 0]
    x = [[0.1], [0.2], [-0.3], [0.0], [0.5], [-0.1], [0.3], [0.2]]
    return validate_dataset(y, t, x, ("x1",))


# -- oracles ------------------------------------------------------------------


def oracle_weighted_median(values, weights):
    """Smallest value whose cumulative weight reaches half; midpoint on an exact tie."""
    order = np.argsort(values, kind="stable")
    v = np.asarray(values, float)[order]
    w = np.asarray(weights, float)[order]
    half = 0.5 * w.sum()
    acc = 0.0
    for k in range(v.size):
        acc += w[k]
        if np.isclose(acc, half, rtol=0, atol=1e-12 * w.sum()) and k + 1 < v.size:
            return 0.5 * (v[k] + v[k + 1])
        if acc > half:
            return v[k]
    return v[-1]


def oracle_dp_ipw_root(y, w, gamma, sigma):
    """Root of sum w exp(-gamma (y-mu)^2 / (2 sigma^2)) (y - mu) by brentq, near the weighted median."""
    def f(mu):
        return np.sum(w * np.exp(-gamma * (y - mu) ** 2 / (2 * sigma**2)) * (y - mu))

    m0 = oracle_weighted_median(y, w)
    lo, hi = m0 - 0.5 * sigma, m0 + 0.5 * sigma
    while f(lo) * f(hi) > 0:
        lo, hi = lo - 0.25 * sigma, hi + 0.25 * sigma
    return brentq(f, lo, hi, xtol=1e-14)


def oracle_quad_moments(u, v2, mu, sigma, gamma):
    """E[h^gamma] and E[h^gamma Y] under N(u, v2) by adaptive quadrature on +-12 sd segments."""
    v = math.sqrt(v2)
    c = -0.5 * gamma * math.log(2 * math.pi * sigma * sigma) - 0.5 * math.log(2 * math.pi * v2)

    def f(y, k):
        return y**k * math.exp(c - 0.5 * gamma * ((y - mu) / sigma) ** 2 - 0.5 * ((y - u) / v) ** 2)

    knots = sorted({u + j * v for j in range(-12, 13, 2)} | {min(max(mu, u - 12 * v), u + 12 * v)})
    return tuple(
        sum(
            integrate.quad(f, a, b, args=(k,), epsabs=1e-14, epsrel=1e-13, limit=200)[0]
            for a, b in zip(knots, knots[1:])
        )
        for k in (0, 1)
    )


# -- acceptance report ---------------------------------------------------------


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Record one pass/fail line for an acceptance criterion."""

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {name}: {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        return ok

    return record
