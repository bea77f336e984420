"""Density-power weights, weighted location/scale summaries and the DR CDF."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

from ._backend import kernels
from .data import Dataset

MADN_CONST = 1.483


@dataclass(frozen=True)
class WeightDensity:
    """Gaussian weighting density ``h(y; mu, sigma)`` raised to ``gamma``."""

    mu: float
    sigma: float
    gamma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")


def dp_weight(wd: WeightDensity, y):
    """``h(y)^gamma``; identically 1 when ``gamma == 0``."""
    y = np.asarray(y, dtype=float)
    if wd.gamma == 0:
        return np.ones_like(y)
    z = (y - wd.mu) / wd.sigma
    log_h = -0.5 * math.log(2.0 * math.pi * wd.sigma**2) - 0.5 * z * z
    return np.exp(wd.gamma * log_h)


def dp_psi(wd: WeightDensity, y):
    """Density-power estimating function ``h(y)^gamma * (y - mu)``."""
    y = np.asarray(y, dtype=float)
    return dp_weight(wd, y) * (y - wd.mu)


def _check_weights(values, weights):
    v = np.asarray(values, dtype=float).reshape(-1)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if v.shape != w.shape:
        raise ValueError(f"{v.size} values but {w.size} weights")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise ValueError("all weights are zero")
    return v, w


def weighted_mean(values, weights) -> float:
    v, w = _check_weights(values, weights)
    return float(np.dot(w, v) / np.sum(w))


def weighted_median(values, weights) -> float:
    """Smallest value whose cumulative weight reaches half the total.

    When the cumulative weight equals exactly half at some value, the
    midpoint between it and the next value is returned.
    """
    v, w = _check_weights(values, weights)
    return kernels.weighted_median(v, w)


def madn(values, center) -> float:
    """``1.483 * median(|values - center|)``."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise ValueError("madn of an empty sample")
    return MADN_CONST * kernels.weighted_median(np.abs(v - center), np.ones(v.size))


def ipw_madn(y, weights, mu) -> float:
    """Weighted MADN; the weights are normally ``1/pi`` over one arm."""
    v, w = _check_weights(y, weights)
    return MADN_CONST * kernels.weighted_median(np.abs(v - mu), w)


# -- doubly robust CDF --------------------------------------------------------


def arm_terms(dataset: Dataset, pi_hat, arm: int = 1):
    """Arm indicator and the matching probability (``pi`` or ``1 - pi``)."""
    pi_hat = np.asarray(pi_hat, dtype=float)
    if pi_hat.shape != (dataset.n,):
        raise ValueError(f"pi_hat has shape {pi_hat.shape}, expected ({dataset.n},)")
    if arm not in (0, 1):
        raise ValueError(f"arm must be 0 or 1, got {arm}")
    ind = dataset.arm_indicator(arm)
    pt = pi_hat if arm == 1 else 1.0 - pi_hat
    if np.any(pt <= 0):
        raise ValueError("propensity of the target arm must be positive")
    return ind, pt


def _dr_pieces(dataset, pi_hat, outcome, arm, augment):
    """Arguments for the kernel root finder.

    With the augmentation on, indicator weights are ``1/(n pi)`` and the
    level is 0.5. With it off, the self-normalized weights ``1/pi`` and
    level ``sum(1/pi)/2`` are used, so the root is exactly the weighted
    median of the arm.
    """
    ind, pt = arm_terms(dataset, pi_hat, arm)
    rows = ind == 1
    if not np.any(rows):
        raise ValueError(f"treatment arm {arm} is empty")
    n = dataset.n
    if augment:
        u, v2 = outcome
        wind = 1.0 / (n * pt[rows])
        coef = -(ind - pt) / (n * pt)
        loc = np.asarray(u, dtype=float)
        scale = np.sqrt(np.asarray(v2, dtype=float))
        target = 0.5
    else:
        wind = 1.0 / pt[rows]
        coef = loc = scale = np.zeros(0)
        target = 0.5 * float(np.cumsum(wind)[-1])
    return rows, wind, coef, loc, scale, target


def dr_cdf(threshold, dataset: Dataset, pi_hat, outcome, arm: int = 1, augment: bool = True):
    """Doubly robust estimate of ``P(Y(arm) <= threshold)``.

    ``(1/n) sum[T/pi * I(Y <= y) - (T - pi)/pi * Phi((y - u)/v)]``; may
    leave [0, 1]. With ``augment=False`` it is the self-normalized
    weighted ECDF ``sum T/pi I(Y <= y) / sum T/pi``, whose median is
    :func:`dr_median` with the same flag.
    """
    ind, pt = arm_terms(dataset, pi_hat, arm)
    y0 = np.asarray(threshold, dtype=float)
    a = np.atleast_1d(y0)
    n = dataset.n
    w = ind / pt
    ipw = (w[None, :] * (dataset.y[None, :] <= a[:, None])).sum(axis=1)
    ipw = ipw / n if augment else ipw / w.sum()
    if augment:
        u, v2 = outcome
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (a[:, None] - np.asarray(u)[None, :]) / np.sqrt(np.asarray(v2))[None, :]
        z = np.where(np.isnan(z), np.inf, z)
        ipw = ipw - (((ind - pt) / pt)[None, :] * ndtr(z)).sum(axis=1) / n
    return float(ipw[0]) if y0.ndim == 0 else ipw


class DrRoot(NamedTuple):
    value: float
    rearranged: bool


def dr_median(dataset: Dataset, pi_hat, outcome, arm: int = 1, augment: bool = True) -> DrRoot:
    """Median crossing of the monotonically rearranged DR CDF.

    The CDF is evaluated at the sorted outcomes of the arm, rearranged to
    be non-decreasing, and the bracketing pair is refined by bisection.
    ``rearranged`` reports whether the rearrangement changed anything.
    """
    rows, wind, coef, loc, scale, target = _dr_pieces(dataset, pi_hat, outcome, arm, augment)
    value, flag = kernels.dr_root(dataset.y[rows], wind, coef, loc, scale, 0.0, False, target)
    return DrRoot(float(value), bool(flag))


def dr_madn(dataset: Dataset, pi_hat, outcome, mu: float, arm: int = 1, augment: bool = True) -> DrRoot:
    """``1.483`` times the DR median of ``|Y - mu|``.

    The augmentation uses the folded conditional law
    ``P(|Y - mu| <= a | X) = Phi((mu + a - u)/v) - Phi((mu - a - u)/v)``.
    """
    rows, wind, coef, loc, scale, target = _dr_pieces(dataset, pi_hat, outcome, arm, augment)
    value, flag = kernels.dr_root(
        np.abs(dataset.y[rows] - mu), wind, coef, loc, scale, float(mu), True, target
    )
    return DrRoot(MADN_CONST * float(value), bool(flag))
