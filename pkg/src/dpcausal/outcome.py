"""Gaussian outcome regression for one treatment arm.

Three fitters share :class:`OutcomeFit`:

* plain MLE (all rows of the arm),
* masked MLE (oracle fit on rows flagged as non-outliers),
* unnormalized density-power fitting of ``c * N(y; x @ beta, sigma^2)``,
  which also returns an estimate of the contamination ratio ``1 - c``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_HAT_MAX = 0.5
LOG_2PI = np.log(2.0 * np.pi)


class OutcomeModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class OutcomeFit:
    beta: np.ndarray
    sigma_q: float
    method: str
    arm: int = 1
    eps_hat: float | None = None
    c_hat: float | None = None
    iterations: int = 0
    converged: bool = True
    degenerate: bool = False
    objective: float | None = None


@dataclass(frozen=True)
class OutcomePrediction:
    """Conditional mean ``u`` and variance ``v2`` of the outcome per row."""

    u: np.ndarray
    v2: np.ndarray
    eps_hat: float | None = None

    def __iter__(self):
        return iter((self.u, self.v2))

    def take(self, rows) -> "OutcomePrediction":
        return OutcomePrediction(self.u[rows], self.v2[rows], self.eps_hat)

    @classmethod
    def zeros(cls, n: int) -> "OutcomePrediction":
        return cls(np.zeros(n), np.zeros(n), 0.0)


def _scale(y: np.ndarray) -> float:
    return float(np.max(np.abs(y))) if y.size else 0.0


def _solve_ls(X: np.ndarray, y: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
    Xw = X if w is None else X * w[:, None]
    A = Xw.T @ X
    b = Xw.T @ y
    if np.linalg.cond(A) > 1e12:
        A = A + 1e-8 * np.trace(A) / A.shape[0] * np.eye(A.shape[0])
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise OutcomeModelError("rank-deficient design after ridge fallback") from exc


def fit_gaussian_mle(design, y, row_mask=None, arm: int = 1) -> OutcomeFit:
    """Least-squares fit with the MLE residual SD (divide by row count).

    Parameters
    ----------
    design : ndarray, shape (m, q)
        Design rows of the modelled arm.
    y : ndarray, shape (m,)
    row_mask : bool array, optional
        Rows to use; all rows when omitted. With the outlier mask negated
        this is the oracle fit on non-outliers.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    mask = np.ones(y.shape[0], bool) if row_mask is None else np.asarray(row_mask, bool)
    Xm, ym = X[mask], y[mask]
    m, q = Xm.shape
    if m < q + 1:
        raise OutcomeModelError(f"need at least {q + 1} rows for {q} coefficients, got {m}")
    beta = _solve_ls(Xm, ym)
    resid = ym - Xm @ beta
    sigma = float(np.sqrt(np.mean(resid**2)))
    floor = 1e-12 * (1.0 + _scale(ym))
    degenerate = sigma < floor
    method = "mle" if row_mask is None or mask.all() else "masked_mle"
    return OutcomeFit(beta, max(sigma, floor), method, arm, degenerate=degenerate)


def dp_objective(c: float, beta, sigma: float, X, y, gamma: float) -> float:
    """Empirical density-power score of the unnormalized Gaussian model.

    ``-(1 + 1/gamma) * mean((c * phi_i)^gamma)
    + c^(1+gamma) * (2 pi sigma^2)^(-gamma/2) * (1+gamma)^(-1/2)``
    """
    r = y - X @ beta
    logphi = -0.5 * LOG_2PI - np.log(sigma) - 0.5 * (r / sigma) ** 2
    s_term = np.mean(np.exp(gamma * logphi))
    b_term = np.exp(-0.5 * gamma * (LOG_2PI + 2 * np.log(sigma))) / np.sqrt(1.0 + gamma)
    return float(-(1.0 + 1.0 / gamma) * c**gamma * s_term + c ** (1.0 + gamma) * b_term)


def _dp_parts(theta, X, y, gamma):
    q = X.shape[1]
    beta, s = theta[:q], theta[q]
    sig2 = np.exp(2.0 * s)
    r = y - X @ beta
    ell = -0.5 * LOG_2PI - s - 0.5 * r**2 / sig2
    w = np.exp(gamma * ell)
    S = float(np.mean(w))
    B = float(np.exp(-0.5 * gamma * LOG_2PI - gamma * s) / np.sqrt(1.0 + gamma))
    return r, sig2, w, S, B


def fit_dp_unnormalized(
    design,
    y,
    gamma_or: float = 0.5,
    init: OutcomeFit | None = None,
    max_iter: int = 500,
    tol: float = 1e-10,
    arm: int = 1,
    trace: list | None = None,
) -> OutcomeFit:
    """Unnormalized density-power fit of ``c * N(y; x @ beta, sigma^2)``.

    Alternates the closed-form minimizer ``c = S / B`` with a damped
    Newton step in ``(beta, log sigma)``, starting from the plain MLE with
    ``c = 1``. Each cycle cannot increase the objective; iteration stops
    when the relative objective change is at most ``tol``.

    ``eps_hat = clip(1 - c, 0, 0.5)``. If ``trace`` is a list, the
    objective after every cycle is appended to it.
    """
    if gamma_or <= 0:
        raise ValueError(f"gamma_or must be positive, got {gamma_or}")
    X = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    m, q = X.shape
    start = init if init is not None else fit_gaussian_mle(X, y, arm=arm)
    g = float(gamma_or)
    floor = 1e-12 * (1.0 + _scale(y))
    theta = np.append(np.asarray(start.beta, float), np.log(start.sigma_q))
    c = 1.0

    def objective(c_, th):
        # trial steps may push log sigma far out; non-finite values are rejected
        with np.errstate(over="ignore", divide="ignore", invalid="ignore", under="ignore"):
            r = y - X @ th[:q]
            ell = -0.5 * LOG_2PI - th[q] - 0.5 * r**2 * np.exp(-2.0 * th[q])
            s_term = np.mean(np.exp(g * ell))
            b_term = np.exp(-0.5 * g * LOG_2PI - g * th[q]) / np.sqrt(1.0 + g)
            val = -(1.0 + 1.0 / g) * c_**g * s_term + c_ ** (1.0 + g) * b_term
        return float(val) if np.isfinite(val) else np.inf

    obj = objective(c, theta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        obj_prev = obj
        r, sig2, w, S, B = _dp_parts(theta, X, y, g)
        if S <= 0.0:
            raise OutcomeModelError("all density-power weights underflowed")
        c = S / B
        a = (1.0 + 1.0 / g) * c**g
        # derivatives of log phi_i in (beta, s)
        dl = np.empty((m, q + 1))
        dl[:, :q] = X * (r / sig2)[:, None]
        dl[:, q] = -1.0 + r**2 / sig2
        gw = g * w / m
        gradS = dl.T @ gw
        hessS = (dl * (g * gw)[:, None]).T @ dl
        hessS[:q, :q] -= (X * (gw / sig2)[:, None]).T @ X
        cross = -2.0 * (X * (gw * r / sig2)[:, None]).sum(axis=0)
        hessS[:q, q] += cross
        hessS[q, :q] += cross
        hessS[q, q] += -2.0 * np.sum(gw * r**2 / sig2)
        cb = c ** (1.0 + g) * B
        grad = -a * gradS
        grad[q] += -g * cb
        hess = -a * hessS
        hess[q, q] += g * g * cb
        evals = np.linalg.eigvalsh(hess)
        if evals[0] <= 1e-12 * max(1.0, abs(evals[-1])):
            hess = hess + (abs(evals[0]) + 1e-6 * max(1.0, abs(evals[-1]))) * np.eye(q + 1)
        step = -np.linalg.solve(hess, grad)
        obj_c = objective(c, theta)
        lam = 1.0
        accepted = False
        for _ in range(31):
            cand = theta + lam * step
            obj_new = objective(c, cand)
            if np.isfinite(obj_new) and obj_new <= obj_c:
                accepted = True
                break
            lam *= 0.5
        if accepted:
            theta = cand
            obj = obj_new
        else:
            obj = obj_c
        if trace is not None:
            trace.append(obj)
        if np.exp(theta[q]) < floor:
            raise OutcomeModelError("sigma collapsed below floor in density-power fit")
        if abs(obj_prev - obj) <= tol * max(abs(obj), 1e-300):
            converged = True
            break
    r, sig2, w, S, B = _dp_parts(theta, X, y, g)
    c = S / B
    obj = objective(c, theta)
    if trace is not None:
        trace.append(obj)
    eps_hat = float(np.clip(1.0 - c, 0.0, EPS_HAT_MAX))
    return OutcomeFit(
        theta[:q].copy(),
        float(np.exp(theta[q])),
        "dp_unnormalized",
        arm,
        eps_hat=eps_hat,
        c_hat=float(c),
        iterations=it,
        converged=converged,
        objective=obj,
    )


def predict_outcome(fit: OutcomeFit, design) -> OutcomePrediction:
    """``u = design @ beta`` and the homoscedastic ``v2 = sigma_q^2``."""
    X = np.asarray(design, dtype=float)
    if X.ndim != 2 or X.shape[1] != fit.beta.shape[0]:
        raise ValueError(f"design has shape {X.shape}, expected (*, {fit.beta.shape[0]})")
    u = X @ fit.beta
    return OutcomePrediction(u, np.full(X.shape[0], fit.sigma_q**2), fit.eps_hat)
