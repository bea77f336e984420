"""Redescending profiles, empirical sensitivity curves and bias probes."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .data import Dataset
from .estimators import (
    DP_KINDS,
    EstimationError,
    EstimatorConfig,
    Nuisances,
    estimate,
    estimating_function,
)
from .outcome import OutcomePrediction
from .simulation import ContaminationConfig, DgpConfig, contaminate, generate, stream
from .weighting import WeightDensity, dp_psi

PROBE_MIN_DRAWS = 1000


def redescending_profile(wd: WeightDensity, y0_grid) -> np.ndarray:
    """``dp_psi`` on a grid of outcome values."""
    return dp_psi(wd, np.asarray(y0_grid, dtype=float))


@dataclass(frozen=True)
class SensitivityCurve:
    y0_grid: np.ndarray
    values: np.ndarray
    estimator: str
    mode: str
    anchor_row: int
    missing: np.ndarray

    def to_csv(self, path) -> None:
        write_curve_csv(path, self.y0_grid, self.values, ("y0", "sensitivity"))


def write_curve_csv(path, xs, ys, header=("x", "y")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, y in zip(xs, ys):
            w.writerow([repr(float(x)), repr(float(y))])


def default_anchor(dataset: Dataset, arm: int = 1) -> int:
    """Row of the ``arm`` unit whose covariates are closest to the covariate mean."""
    rows = np.flatnonzero(dataset.t == arm)
    if rows.size == 0:
        raise ValueError(f"treatment arm {arm} is empty")
    centre = dataset.x.mean(axis=0)
    d = np.sum((dataset.x[rows] - centre) ** 2, axis=1)
    return int(rows[np.argmin(d)])


def _extend_nuisances(nuis: Nuisances, row: int) -> Nuisances:
    pi = np.append(nuis.pi_hat, nuis.pi_hat[row])
    out = {
        a: OutcomePrediction(np.append(p.u, p.u[row]), np.append(p.v2, p.v2[row]), p.eps_hat)
        for a, p in nuis.outcome.items()
    }
    return Nuisances(pi, out, nuis.ps_fit, nuis.or_fits)


def sensitivity_curve(
    config: EstimatorConfig,
    dataset: Dataset,
    nuisances: Nuisances,
    y0_grid,
    anchor_row: int | None = None,
    mode: str = "add_one",
    hold_scale: bool = True,
) -> SensitivityCurve:
    """Finite-sample sensitivity of an estimator to one outcome value.

    ``add_one`` appends a unit of the estimated arm with the anchor's
    covariates and nuisance values and outcome ``y0``; the value is
    ``(n + 1) * (mu(y0) - mu)``. ``replace_one`` overwrites the anchor's
    outcome, scaled by ``n``. Nuisances are held fixed, and so is the
    weight scale of the density-power kinds (at the full-sample value)
    unless ``hold_scale`` is false; a re-estimated MADN adds a bounded
    step that does not vanish far from the bulk. Failed evaluations are
    recorded as NaN and marked in ``missing``.
    """
    grid = np.asarray(y0_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("y0 grid must be non-empty and strictly increasing")
    if mode not in ("add_one", "replace_one"):
        raise ValueError(f"mode must be add_one or replace_one, got {mode!r}")
    arm = config.arm
    anchor = default_anchor(dataset, arm) if anchor_row is None else int(anchor_row)
    if not 0 <= anchor < dataset.n:
        raise ValueError(f"anchor row {anchor} out of range")
    if hold_scale and config.kind in DP_KINDS and config.sigma_fixed is None:
        config = replace(config, sigma_fixed=estimate(dataset, nuisances, config).sigma_h)
    base = estimate(dataset, nuisances, config).mu_hat
    if mode == "add_one":
        nuis = _extend_nuisances(nuisances, anchor)
        scale = dataset.n + 1
    else:
        if dataset.t[anchor] != arm:
            raise ValueError("replace_one needs an anchor from the estimated arm")
        nuis = nuisances
        scale = dataset.n
    values = np.full(grid.size, np.nan)
    for k, y0 in enumerate(grid):
        if mode == "add_one":
            ds = dataset.append_unit(y0, arm, dataset.x[anchor])
        else:
            y = dataset.y.copy()
            y[anchor] = y0
            ds = dataset.with_outcome(y)
        try:
            values[k] = scale * (estimate(ds, nuis, config).mu_hat - base)
        except (EstimationError, ValueError):
            pass
    return SensitivityCurve(grid, values, config.label, mode, anchor, np.isnan(values))


# -- Monte-Carlo probe of estimating-equation bias ---------------------------------


class ProbeResult(NamedTuple):
    mc_mean: float
    mc_se: float
    predicted: str

    @property
    def z(self) -> float:
        return self.mc_mean / self.mc_se if self.mc_se > 0 else math.copysign(math.inf, self.mc_mean)


def predicted_bias(
    kind: str, ps_correct: bool, or_correct: bool, contaminated: bool, heterogeneous: bool = False
) -> str:
    """Expected sign class of the estimating-equation mean at the clean target.

    ``zero``: exactly unbiased; ``O(nu)``: bias bounded by the weight mass
    left on outliers, negligible for far outliers; ``positive`` /
    ``negative``: dominant bias of that sign for the upward outliers and
    the incorrect propensity used by :func:`bias_probe`; ``nonzero``: no
    sign claim. Covariate-dependent contamination reweights the clean part
    of the law, so every density-power cell is ``nonzero`` under it.
    """
    dr = kind in ("naive_dr", "dp_dr", "eps_dp_dr")
    consistent = ps_correct or (dr and or_correct)
    if kind in ("naive_ipw", "naive_dr"):
        if not consistent:
            return "nonzero"
        return "positive" if contaminated else "zero"
    if not contaminated:
        return "zero" if consistent else "nonzero"
    if heterogeneous:
        return "nonzero"
    if ps_correct:
        return "O(nu)"
    if kind == "eps_dp_dr" and or_correct:
        return "O(nu)"
    if kind == "dp_dr" and or_correct:
        return "negative"
    return "nonzero"


def bias_probe(
    kind: str,
    contamination: ContaminationConfig,
    mu_eval: float = 3.0,
    M: int = 100_000,
    seed: int = 0,
    gamma: float = 0.5,
    sigma_h: float = 1.5,
    ps_correct: bool = True,
    or_correct: bool = True,
    dgp: DgpConfig | None = None,
    eps_known: float | None = None,
) -> ProbeResult:
    """Monte-Carlo mean of an estimating function under a contaminated law.

    Draws ``M`` units, evaluates the estimating function at ``mu_eval``
    with true nuisances (or the deliberately wrong ones) and returns the
    sample mean, its standard error and the predicted bias class.

    The correct propensity is the data-generating one; the incorrect one
    drops ``X1`` (``logistic(0.2 X2)``). The correct outcome model is the
    clean conditional law ``N(mu1 + 1.2 X1 + 0.3 X2, 0.72)``; the
    incorrect one drops ``X1``. ``eps_known`` (default: the contamination
    ratio) feeds the ``eps_dp_dr`` correction.
    """
    if M < PROBE_MIN_DRAWS:
        raise ValueError(f"M must be at least {PROBE_MIN_DRAWS}, got {M}")
    dgp = replace(dgp or DgpConfig(), n=int(M))
    g = generate(dgp, stream(seed, 0, 0))
    ds, _ = contaminate(g.dataset, contamination, stream(seed, 0, 1), arm_means=g.truth)
    x1, x2 = ds.x[:, 0], ds.x[:, 1]
    a1, a2 = dgp.ps_coefs
    pi = expit(a1 * x1 + a2 * x2) if ps_correct else expit(a2 * x2)
    b1, b2 = dgp.outcome_coefs
    u = dgp.mu1 + b2 * x2 + (b1 * x1 if or_correct else 0.0)
    v2 = np.full(ds.n, dgp.error_sd**2 if or_correct else dgp.error_sd**2 + b1**2)
    eps = contamination.eps if eps_known is None else eps_known
    psi = estimating_function(
        kind, ds, pi, OutcomePrediction(u, v2), mu_eval, sigma_h, gamma, eps, arm=1
    )
    mean = float(np.mean(psi))
    se = float(np.std(psi, ddof=1) / math.sqrt(ds.n))
    contaminated = contamination.mode != "none" and contamination.eps > 0
    het = contamination.mode == "heterogeneous"
    return ProbeResult(mean, se, predicted_bias(kind, ps_correct, or_correct, contaminated, het))
