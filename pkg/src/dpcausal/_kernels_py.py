"""Pure numpy implementation of the solver kernels.

Same signatures and semantics as the compiled ``_kernels`` extension; used
when the extension is not built or ``DPCAUSAL_BACKEND=python``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc

MADN_CONST = 1.483
_SQRT1_2 = math.sqrt(0.5)


def _seqsum(x, axis=None):
    # left-to-right summation, matching the compiled loops
    if axis is None:
        return float(np.cumsum(x)[-1]) if x.size else 0.0
    return np.cumsum(x, axis=axis)[..., -1]


def _phi_cdf(z):
    return 0.5 * erfc(-z * _SQRT1_2)


def weighted_median(values, weights) -> float:
    """Lower weighted median with the midpoint rule at exactly half mass.

    Entries with zero weight are ignored.
    """
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    keep = w > 0
    if not np.all(keep):
        v, w = v[keep], w[keep]
    if v.size == 0:
        raise ValueError("weighted median needs a positive weight")
    order = np.argsort(v, kind="stable")
    vs = v[order]
    cw = np.cumsum(w[order])
    half = 0.5 * cw[-1]
    k = int(np.searchsorted(cw, half, side="left"))
    if k < vs.size - 1 and cw[k] == half:
        return 0.5 * (vs[k] + vs[k + 1])
    return float(vs[k])


def _aug_cdf(a, coef, loc, scale, center, folded):
    """Sum_i coef_i * G_i(a) for every threshold in ``a`` (1-d)."""
    if coef.size == 0:
        return np.zeros_like(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        if folded:
            hi = (center + a[:, None] - loc[None, :]) / scale[None, :]
            lo = (center - a[:, None] - loc[None, :]) / scale[None, :]
            hi = np.where(np.isnan(hi), np.inf, hi)
            # P(Y < center - a): a point mass on the boundary counts as inside
            lo = np.where(np.isnan(lo), -np.inf, lo)
            g = _phi_cdf(hi) - _phi_cdf(lo)
        else:
            z = (a[:, None] - loc[None, :]) / scale[None, :]
            z = np.where(np.isnan(z), np.inf, z)
            g = _phi_cdf(z)
    return _seqsum(g * coef[None, :], axis=1)


def dr_root(obs, wind, coef, loc, scale, center, folded, target):
    """Target crossing of a doubly robust empirical CDF.

    ``F(a) = sum_j wind_j * I(obs_j <= a) + sum_i coef_i * G_i(a)`` with
    ``G_i`` the Gaussian CDF ``Phi((a - loc_i) / scale_i)`` or, when
    ``folded``, ``P(|Y - center| <= a)`` for ``Y ~ N(loc_i, scale_i^2)``.

    F is evaluated on the sorted observations and monotonically rearranged;
    the first grid point reaching ``target`` brackets the crossing, which
    is refined by bisection on the continuous part.

    Returns
    -------
    root : float
    rearranged : bool
        Whether the rearrangement changed any grid value.
    """
    obs = np.asarray(obs, dtype=np.float64)
    wind = np.asarray(wind, dtype=np.float64)
    coef = np.asarray(coef, dtype=np.float64)
    loc = np.asarray(loc, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    m = obs.shape[0]
    if m == 0:
        raise ValueError("no observations for the DR CDF")
    order = np.argsort(obs, kind="stable")
    a = obs[order]
    cum = np.cumsum(wind[order])
    F = cum + _aug_cdf(a, coef, loc, scale, center, folded)
    Fs = np.sort(F, kind="stable")
    rearranged = bool(np.any(Fs != F))
    k = int(np.searchsorted(Fs, target, side="left"))
    if k >= m:
        raise ValueError("DR CDF never reaches the target level")
    if Fs[k] == target and k < m - 1:
        return 0.5 * (a[k] + a[k + 1]), rearranged
    if k == 0 or coef.size == 0:
        return float(a[k]), rearranged
    base = cum[k - 1]

    def g(x):
        return base + _aug_cdf(np.array([x]), coef, loc, scale, center, folded)[0] - target

    lo, hi = float(a[k - 1]), float(a[k])
    glo, ghi = g(lo), g(hi)
    if not (glo < 0.0 <= ghi):
        return hi, rearranged
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= 1e-13 * max(1.0, abs(hi)):
            break
        if g(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return hi, rearranged


def dp_ipw_solve(y, base_w, gamma, mu0, sigma_fixed, tol, max_iter, sigma_floor):
    """Fixed-point iteration of the density-power weighted mean.

    ``mu <- sum(w y) / sum(w)`` with ``w = base_w * exp(-gamma (y-mu)^2 / (2 sigma^2))``.
    The Gaussian normalizing constant cancels and is omitted. With
    ``sigma_fixed <= 0`` the scale is re-estimated as the weighted MADN at
    every iterate.

    Returns ``(mu, sigma, iterations, converged, trace_mu, trace_sigma)``.
    """
    y = np.asarray(y, dtype=np.float64)
    bw = np.asarray(base_w, dtype=np.float64)
    mu = float(mu0)
    trace_mu = [mu]
    trace_sigma = []
    converged = False
    it = 0
    sigma = float(sigma_fixed)
    for it in range(1, max_iter + 1):
        if sigma_fixed <= 0:
            sigma = max(MADN_CONST * weighted_median(np.abs(y - mu), bw), sigma_floor)
        trace_sigma.append(sigma)
        if gamma == 0.0:
            w = bw
        else:
            r = y - mu
            w = bw * np.exp(-gamma * r * r / (2.0 * sigma * sigma))
        sw = _seqsum(w)
        swy = _seqsum(w * y)
        if not sw > 0.0:
            raise ValueError("degenerate weights: all density-power weights underflowed")
        mu_new = swy / sw
        trace_mu.append(mu_new)
        delta = abs(mu_new - mu)
        mu = mu_new
        if delta <= tol:
            converged = True
            break
    if sigma_fixed <= 0:
        sigma = max(MADN_CONST * weighted_median(np.abs(y - mu), bw), sigma_floor)
    return mu, sigma, it, converged, trace_mu, trace_sigma


def cond_moments(u, v2, mu, sigma, gamma):
    """Scaled Gaussian conditional moments without the ``(2 pi sigma^2)^(-gamma/2)`` factor.

    Returns ``(m0, m1)`` arrays with ``m0 = sigma/s * exp(-gamma (mu-u)^2 / (2 s^2))``,
    ``s^2 = sigma^2 + gamma v2`` and ``m1 = m0 (u sigma^2 + gamma mu v2) / s^2``.
    """
    sig2 = sigma * sigma
    s2 = sig2 + gamma * v2
    d = mu - u
    m0 = np.sqrt(sig2 / s2) * np.exp(-gamma * d * d / (2.0 * s2))
    m1 = m0 * (u * sig2 + gamma * mu * v2) / s2
    return m0, m1


def dp_dr_solve(
    y, base_w, u, v2, w2, gamma, mu0, sigma_fixed, tol, max_iter, sigma_floor,
    mad_wind, mad_coef, mad_target,
):
    """Fixed-point iteration for the density-power doubly robust equation.

    ``y``/``base_w`` hold the arm's rows; ``u``, ``v2``, ``w2`` hold every
    row (``w2 = (T - pi)/pi * (1 - eps)``). With ``sigma_fixed <= 0`` the
    scale is the DR-MADN at every iterate, computed from ``mad_wind``
    (indicator weights of the arm rows), ``mad_coef`` (augmentation
    coefficients, may be empty) and ``mad_target``.

    Returns ``(mu, sigma, iterations, converged, trace_mu, trace_sigma, rearranged)``.
    """
    y = np.asarray(y, dtype=np.float64)
    bw = np.asarray(base_w, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    mad_wind = np.asarray(mad_wind, dtype=np.float64)
    mad_coef = np.asarray(mad_coef, dtype=np.float64)
    sd = np.sqrt(v2)
    n = u.shape[0]
    mu = float(mu0)
    trace_mu = [mu]
    trace_sigma = []
    rearranged = False
    converged = False
    it = 0
    sigma = float(sigma_fixed)

    def madn(center):
        root, flag = dr_root(
            np.abs(y - center), mad_wind, mad_coef, u, sd, center, True, mad_target
        )
        return max(MADN_CONST * root, sigma_floor), flag

    for it in range(1, max_iter + 1):
        if sigma_fixed <= 0:
            sigma, flag = madn(mu)
            rearranged = rearranged or flag
        trace_sigma.append(sigma)
        r = y - mu
        w1 = bw * np.exp(-gamma * r * r / (2.0 * sigma * sigma))
        m0, m1 = cond_moments(u, v2, mu, sigma, gamma)
        num = _seqsum(np.concatenate(([0.0], w1 * y, -(w2 * m1))))
        den = _seqsum(np.concatenate(([0.0], w1, -(w2 * m0))))
        if not abs(den) >= 1e-8 * n:
            raise ValueError(f"degenerate denominator {den:.3g} in DR update")
        mu_new = num / den
        trace_mu.append(mu_new)
        delta = abs(mu_new - mu)
        mu = mu_new
        if delta <= tol:
            converged = True
            break
    if sigma_fixed <= 0:
        sigma, flag = madn(mu)
        rearranged = rearranged or flag
    return mu, sigma, it, converged, trace_mu, trace_sigma, rearranged
