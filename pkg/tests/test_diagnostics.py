import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from conftest import make_data

from dpcausal.diagnostics import (
    bias_probe,
    default_anchor,
    predicted_bias,
    redescending_profile,
    sensitivity_curve,
)
from dpcausal.estimators import EstimatorConfig, Nuisances, estimate
from dpcausal.outcome import OutcomePrediction
from dpcausal.simulation import ContaminationConfig
from dpcausal.weighting import WeightDensity

HOM = ContaminationConfig("homogeneous", 0.1)


def _tail(mu, sigma, gamma):
    wd = WeightDensity(mu, sigma, gamma)
    return np.max(np.abs(redescending_profile(wd, [mu - 15 * sigma, mu + 15 * sigma])))


@given(st.floats(-10, 10), st.floats(0.1, 10), st.floats(0.5, 2.0))
def test_profile_vanishes_far_out(mu, sigma, gamma):
    assert _tail(mu, sigma, gamma) < 1e-12 * sigma


@pytest.mark.xfail(strict=True, reason="exp(-112.5 * 0.1) * 15 is about 2e-4, far above 1e-12")
def test_profile_tail_threshold_at_gamma_point_one():
    assert _tail(0.0, 1.0, 0.1) < 1e-12


@given(st.floats(-10, 10), st.floats(0.1, 10), st.floats(0.01, 2.0))
def test_profile_tail_closed_form(mu, sigma, gamma):
    ref = 15 * sigma * (2 * np.pi * sigma**2) ** (-gamma / 2) * np.exp(-112.5 * gamma)
    assert _tail(mu, sigma, gamma) == pytest.approx(ref, rel=1e-9)


@given(st.floats(-5, 5), st.floats(0.2, 5), st.floats(0.1, 2.0))
def test_profile_peak_location(mu, sigma, gamma):
    grid = mu + np.linspace(0, 6, 60001) * sigma / np.sqrt(gamma)
    prof = redescending_profile(WeightDensity(mu, sigma, gamma), grid)
    assert grid[np.argmax(prof)] == pytest.approx(mu + sigma / np.sqrt(gamma), abs=2e-4 * sigma / np.sqrt(gamma))
    assert redescending_profile(WeightDensity(mu, sigma, gamma), [mu])[0] == 0


def test_profile_gamma_zero_is_linear():
    y = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(redescending_profile(WeightDensity(1.0, 2.0, 0.0), y), y - 1.0)


def test_anchor_is_in_arm(contaminated):
    ds, _, _ = contaminated
    assert ds.t[default_anchor(ds, 1)] == 1
    assert ds.t[default_anchor(ds, 0)] == 0


def test_naive_curve_is_affine(contaminated):
    ds, nuis, _ = contaminated
    grid = np.linspace(-20, 20, 21)
    c = sensitivity_curve(EstimatorConfig("naive_ipw"), ds, nuis, grid)
    slope, icpt = np.polyfit(grid, c.values, 1)
    resid = c.values - (slope * grid + icpt)
    assert 1 - resid.var() / c.values.var() > 0.999999
    assert not c.missing.any()


def test_dp_curve_redescends(contaminated):
    ds, nuis, _ = contaminated
    cfg = EstimatorConfig("dp_ipw", gamma=0.5)
    grid = np.linspace(-30, 40, 141)
    c = sensitivity_curve(cfg, ds, nuis, grid)
    assert np.max(np.abs(c.values[[0, -1]])) < 0.01 * np.max(np.abs(c.values))


def test_refit_scale_leaves_bounded_step(contaminated):
    ds, nuis, _ = contaminated
    cfg = EstimatorConfig("dp_ipw", gamma=0.5)
    c = sensitivity_curve(cfg, ds, nuis, [-200.0, -100.0, 100.0, 200.0], hold_scale=False)
    assert np.all(np.isfinite(c.values))
    assert np.ptp(c.values) < 1e-6 * max(1.0, np.max(np.abs(c.values)))


def test_dr_wrong_ps_plateau():
    ds, _ = make_data(n=300, eps=0.1, seed=8)
    x1, x2 = ds.x[:, 0], ds.x[:, 1]
    nuis = Nuisances(expit(0.2 * x2), {1: OutcomePrediction(3 + 1.2 * x1 + 0.3 * x2, np.full(ds.n, 0.72))})
    cfg = EstimatorConfig("dp_dr", gamma=0.5)
    base = estimate(ds, nuis, cfg)
    grid = base.mu_hat + np.array([20.0, 30.0]) * base.sigma_h
    c = sensitivity_curve(cfg, ds, nuis, grid)
    assert abs(c.values[0] - c.values[1]) < 0.05 * max(abs(c.values[1]), 1e-12)


def test_location_shift_equivariance(contaminated):
    ds, nuis, _ = contaminated
    cfg = EstimatorConfig("dp_ipw", gamma=0.5)
    grid = np.linspace(-5, 10, 7)
    a = sensitivity_curve(cfg, ds, nuis, grid)
    shifted = ds.with_outcome(ds.y + 4.0)
    b = sensitivity_curve(cfg, shifted, nuis, grid + 4.0)
    np.testing.assert_allclose(a.values, b.values, atol=1e-5)


def test_replace_one_mode(contaminated):
    ds, nuis, _ = contaminated
    anchor = default_anchor(ds, 1)
    c = sensitivity_curve(EstimatorConfig("naive_ipw"), ds, nuis, [ds.y[anchor]], mode="replace_one")
    assert c.values[0] == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ValueError):
        sensitivity_curve(EstimatorConfig("naive_ipw"), ds, nuis, [1.0], anchor_row=default_anchor(ds, 0), mode="replace_one")


def test_curve_csv(tmp_path, contaminated):
    ds, nuis, _ = contaminated
    c = sensitivity_curve(EstimatorConfig("naive_ipw"), ds, nuis, [0.0, 1.0])
    p = tmp_path / "c.csv"
    c.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "y0,sensitivity" and len(lines) == 3


def test_grid_must_increase(contaminated):
    ds, nuis, _ = contaminated
    with pytest.raises(ValueError):
        sensitivity_curve(EstimatorConfig("naive_ipw"), ds, nuis, [1.0, 0.0])


def test_predicted_classes():
    assert predicted_bias("naive_ipw", True, True, False) == "zero"
    assert predicted_bias("naive_ipw", True, True, True) == "positive"
    assert predicted_bias("dp_ipw", True, False, True) == "O(nu)"
    assert predicted_bias("dp_dr", False, True, True) == "negative"
    assert predicted_bias("eps_dp_dr", False, True, True) == "O(nu)"
    assert predicted_bias("dp_ipw", False, True, False) == "nonzero"
    assert predicted_bias("dp_ipw", True, True, True, heterogeneous=True) == "nonzero"
    assert predicted_bias("naive_ipw", True, True, True, heterogeneous=True) == "positive"


def test_probe_small_m_rejected():
    with pytest.raises(ValueError):
        bias_probe("dp_ipw", HOM, M=10)


def test_probe_naive_clean_is_zero():
    r = bias_probe("naive_ipw", ContaminationConfig(), M=20_000, seed=1)
    assert abs(r.z) < 4 and r.predicted == "zero"


def test_probe_naive_contaminated_is_positive():
    r = bias_probe("naive_ipw", HOM, M=20_000, seed=1)
    assert r.z > 10 and r.predicted == "positive"
