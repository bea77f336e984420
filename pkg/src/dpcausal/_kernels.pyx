# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled solver kernels; mirrors ``_kernels_py`` call for call."""

import numpy as np
cimport numpy as cnp
from libc.math cimport erfc, exp, sqrt, fabs, isnan, INFINITY

cnp.import_array()

MADN_CONST = 1.483
cdef double _MADN = 1.483
cdef double _SQRT1_2 = 0.7071067811865476


cdef inline double _phi(double z) noexcept nogil:
    return 0.5 * erfc(-z * _SQRT1_2)


cdef double _wmedian(const double[::1] v, const double[::1] w) except? -1.0:
    cdef Py_ssize_t n = v.shape[0], i, m = 0, k
    cdef cnp.ndarray[cnp.float64_t, ndim=1] vk = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wk = np.empty(n)
    for i in range(n):
        if w[i] > 0:
            vk[m] = v[i]
            wk[m] = w[i]
            m += 1
    if m == 0:
        raise ValueError("weighted median needs a positive weight")
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.argsort(vk[:m], kind="stable").astype(np.int64)
    cdef double cum = 0.0, half, total = 0.0
    for i in range(m):
        total += wk[order[i]]
    half = 0.5 * total
    # cumulative sums recomputed in the same order as the numpy twin
    cum = 0.0
    for k in range(m):
        cum += wk[order[k]]
        if cum >= half:
            if k < m - 1 and cum == half:
                return 0.5 * (vk[order[k]] + vk[order[k + 1]])
            return vk[order[k]]
    return vk[order[m - 1]]


def weighted_median(values, weights):
    """Lower weighted median with the midpoint rule at exactly half mass."""
    v = np.ascontiguousarray(values, dtype=np.float64)
    w = np.ascontiguousarray(weights, dtype=np.float64)
    return float(_wmedian(v, w))


cdef inline double _aug(double a, const double[::1] coef, const double[::1] loc,
                        const double[::1] scale, double center, bint folded) noexcept nogil:
    cdef Py_ssize_t i, n = coef.shape[0]
    cdef double acc = 0.0, hi, lo, z
    if folded:
        for i in range(n):
            hi = (center + a - loc[i]) / scale[i]
            lo = (center - a - loc[i]) / scale[i]
            if isnan(hi):
                hi = INFINITY
            if isnan(lo):
                lo = -INFINITY
            acc += (_phi(hi) - _phi(lo)) * coef[i]
    else:
        for i in range(n):
            z = (a - loc[i]) / scale[i]
            if isnan(z):
                z = INFINITY
            acc += _phi(z) * coef[i]
    return acc


cdef tuple _dr_root(const double[::1] obs, const double[::1] wind, const double[::1] coef,
                    const double[::1] loc, const double[::1] scale, double center,
                    bint folded, double target):
    cdef Py_ssize_t m = obs.shape[0], j, k, it
    if m == 0:
        raise ValueError("no observations for the DR CDF")
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.argsort(np.asarray(obs), kind="stable").astype(np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a = np.empty(m)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cum = np.empty(m)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] F = np.empty(m)
    cdef double c = 0.0
    cdef bint has_aug = coef.shape[0] > 0
    for j in range(m):
        a[j] = obs[order[j]]
        c += wind[order[j]]
        cum[j] = c
        F[j] = c + (_aug(a[j], coef, loc, scale, center, folded) if has_aug else 0.0)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] Fs = np.sort(F, kind="stable")
    cdef bint rearranged = False
    for j in range(m):
        if Fs[j] != F[j]:
            rearranged = True
            break
    k = m
    for j in range(m):
        if Fs[j] >= target:
            k = j
            break
    if k >= m:
        raise ValueError("DR CDF never reaches the target level")
    if Fs[k] == target and k < m - 1:
        return 0.5 * (a[k] + a[k + 1]), rearranged
    if k == 0 or not has_aug:
        return float(a[k]), rearranged
    cdef double base = cum[k - 1]
    cdef double lo = a[k - 1], hi = a[k], mid, glo, ghi
    glo = base + _aug(lo, coef, loc, scale, center, folded) - target
    ghi = base + _aug(hi, coef, loc, scale, center, folded) - target
    if not (glo < 0.0 <= ghi):
        return hi, rearranged
    for it in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= 1e-13 * max(1.0, fabs(hi)):
            break
        if base + _aug(mid, coef, loc, scale, center, folded) - target < 0.0:
            lo = mid
        else:
            hi = mid
    return hi, rearranged


def dr_root(obs, wind, coef, loc, scale, center, folded, target):
    """Target crossing of a doubly robust empirical CDF; see ``_kernels_py.dr_root``."""
    return _dr_root(
        np.ascontiguousarray(obs, dtype=np.float64),
        np.ascontiguousarray(wind, dtype=np.float64),
        np.ascontiguousarray(coef, dtype=np.float64),
        np.ascontiguousarray(loc, dtype=np.float64),
        np.ascontiguousarray(scale, dtype=np.float64),
        float(center), bool(folded), float(target),
    )


def dp_ipw_solve(y, base_w, double gamma, double mu0, double sigma_fixed, double tol,
                 int max_iter, double sigma_floor):
    """Density-power weighted-mean fixed point; see ``_kernels_py.dp_ipw_solve``."""
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] bw = np.ascontiguousarray(base_w, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0], j
    cdef double[::1] dev = np.empty(n)
    cdef double mu = mu0, sigma = sigma_fixed, sw, swy, wj, r, mu_new, delta
    cdef int it = 0
    cdef bint converged = False
    trace_mu = [mu]
    trace_sigma = []
    for it in range(1, max_iter + 1):
        if sigma_fixed <= 0:
            for j in range(n):
                dev[j] = fabs(yv[j] - mu)
            sigma = max(_MADN * _wmedian(dev, bw), sigma_floor)
        trace_sigma.append(sigma)
        sw = 0.0
        swy = 0.0
        for j in range(n):
            if gamma == 0.0:
                wj = bw[j]
            else:
                r = yv[j] - mu
                wj = bw[j] * exp(-gamma * r * r / (2.0 * sigma * sigma))
            sw += wj
            swy += wj * yv[j]
        if not sw > 0.0:
            raise ValueError("degenerate weights: all density-power weights underflowed")
        mu_new = swy / sw
        trace_mu.append(mu_new)
        delta = fabs(mu_new - mu)
        mu = mu_new
        if delta <= tol:
            converged = True
            break
    if sigma_fixed <= 0:
        for j in range(n):
            dev[j] = fabs(yv[j] - mu)
        sigma = max(_MADN * _wmedian(dev, bw), sigma_floor)
    return mu, sigma, it, converged, trace_mu, trace_sigma


def cond_moments(u, v2, double mu, double sigma, double gamma):
    """Scaled Gaussian conditional moments; see ``_kernels_py.cond_moments``."""
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[::1] vv = np.ascontiguousarray(v2, dtype=np.float64)
    cdef Py_ssize_t n = uv.shape[0], i
    m0 = np.empty(n)
    m1 = np.empty(n)
    cdef double[::1] a0 = m0, a1 = m1
    cdef double sig2 = sigma * sigma, s2, d
    for i in range(n):
        s2 = sig2 + gamma * vv[i]
        d = mu - uv[i]
        a0[i] = sqrt(sig2 / s2) * exp(-gamma * d * d / (2.0 * s2))
        a1[i] = a0[i] * (uv[i] * sig2 + gamma * mu * vv[i]) / s2
    return m0, m1


def dp_dr_solve(y, base_w, u, v2, w2, double gamma, double mu0, double sigma_fixed,
                double tol, int max_iter, double sigma_floor, mad_wind, mad_coef,
                double mad_target):
    """Density-power DR fixed point; see ``_kernels_py.dp_dr_solve``."""
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] bw = np.ascontiguousarray(base_w, dtype=np.float64)
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[::1] vv = np.ascontiguousarray(v2, dtype=np.float64)
    cdef const double[::1] w2v = np.ascontiguousarray(w2, dtype=np.float64)
    cdef const double[::1] mw = np.ascontiguousarray(mad_wind, dtype=np.float64)
    cdef const double[::1] mc = np.ascontiguousarray(mad_coef, dtype=np.float64)
    cdef const double[::1] sd = np.sqrt(np.asarray(vv))
    cdef Py_ssize_t m = yv.shape[0], n = uv.shape[0], j, i
    cdef double[::1] dev = np.empty(m)
    cdef double mu = mu0, sigma = sigma_fixed, num, den, r, w1, s2, d, m0, sig2
    cdef double mu_new, delta
    cdef int it = 0
    cdef bint converged = False, rearranged = False
    trace_mu = [mu]
    trace_sigma = []
    for it in range(1, max_iter + 1):
        if sigma_fixed <= 0:
            for j in range(m):
                dev[j] = fabs(yv[j] - mu)
            root, flag = _dr_root(dev, mw, mc, uv, sd, mu, True, mad_target)
            sigma = max(_MADN * root, sigma_floor)
            rearranged = rearranged or flag
        trace_sigma.append(sigma)
        num = 0.0
        den = 0.0
        for j in range(m):
            r = yv[j] - mu
            w1 = bw[j] * exp(-gamma * r * r / (2.0 * sigma * sigma))
            num += w1 * yv[j]
            den += w1
        sig2 = sigma * sigma
        for i in range(n):
            s2 = sig2 + gamma * vv[i]
            d = mu - uv[i]
            m0 = sqrt(sig2 / s2) * exp(-gamma * d * d / (2.0 * s2))
            num += -(w2v[i] * (m0 * (uv[i] * sig2 + gamma * mu * vv[i]) / s2))
            den += -(w2v[i] * m0)
        if not fabs(den) >= 1e-8 * n:
            raise ValueError(f"degenerate denominator {den:.3g} in DR update")
        mu_new = num / den
        trace_mu.append(mu_new)
        delta = fabs(mu_new - mu)
        mu = mu_new
        if delta <= tol:
            converged = True
            break
    if sigma_fixed <= 0:
        for j in range(m):
            dev[j] = fabs(yv[j] - mu)
        root, flag = _dr_root(dev, mw, mc, uv, sd, mu, True, mad_target)
        sigma = max(_MADN * root, sigma_floor)
        rearranged = rearranged or flag
    return mu, sigma, it, converged, trace_mu, trace_sigma, rearranged
