"""Logistic propensity score fitted by Newton / IRLS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

DEFAULT_CLIP = (0.01, 0.99)


class PropensityError(RuntimeError):
    pass


class PerfectSeparation(PropensityError):
    pass


@dataclass(frozen=True)
class PropensityFit:
    alpha: np.ndarray
    pi_hat: np.ndarray
    clip_lo: float
    clip_hi: float
    iterations: int
    converged: bool
    ridge_used: bool = False

    @property
    def clipped(self) -> bool:
        return self.clip_lo > 0.0 or self.clip_hi < 1.0


def _loglik(eta: np.ndarray, t: np.ndarray) -> float:
    # log(1 + e^eta) computed stably
    return float(np.sum(t * eta - np.logaddexp(0.0, eta)))


def fit_logistic(
    design: np.ndarray,
    t: np.ndarray,
    max_iter: int = 100,
    tol: float = 1e-10,
    clip: tuple[float, float] | None = DEFAULT_CLIP,
    divergence_bound: float = 30.0,
) -> PropensityFit:
    """Maximum-likelihood logistic regression of ``t`` on ``design``.

    Newton iterations from ``alpha = 0`` with step halving. Stops when the
    max-norm of the score ``design.T @ (t - p)`` is at most ``tol * n``.
    Reaching ``max_iter`` is reported through ``converged=False``.

    Parameters
    ----------
    clip : (lo, hi) or None
        Bounds applied to the fitted probabilities. ``None`` disables
        clipping.

    Raises
    ------
    PerfectSeparation
        When all ``t`` are equal or the coefficient norm exceeds
        ``divergence_bound``.
    PropensityError
        Singular information matrix even after the ridge fallback.
    """
    X = np.asarray(design, dtype=float)
    t = np.asarray(t, dtype=float)
    n, q = X.shape
    if t.shape[0] != n:
        raise ValueError(f"design has {n} rows but t has {t.shape[0]}")
    if n <= q:
        raise PropensityError(f"need more rows than columns ({n} <= {q})")
    if np.all(t == t[0]):
        raise PerfectSeparation(f"all treatment values equal {t[0]:g}")
    if clip is not None and not 0.0 < clip[0] < clip[1] < 1.0:
        raise ValueError(f"invalid clip bounds {clip}")

    alpha = np.zeros(q)
    eta = X @ alpha
    ll = _loglik(eta, t)
    converged = False
    ridge_used = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(eta)
        grad = X.T @ (t - p)
        if np.max(np.abs(grad)) <= tol * n:
            converged = True
            it -= 1
            break
        w = p * (1.0 - p)
        H = (X * w[:, None]).T @ X
        if np.linalg.cond(H) > 1e12:
            H = H + 1e-8 * np.eye(q)
            ridge_used = True
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError as exc:
            raise PropensityError("singular information matrix after ridge fallback") from exc
        lam = 1.0
        for _ in range(30):
            cand = alpha + lam * step
            eta_c = X @ cand
            ll_c = _loglik(eta_c, t)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            lam *= 0.5
        alpha, eta, ll = cand, eta_c, ll_c
        if not np.all(np.isfinite(alpha)) or np.linalg.norm(alpha) > divergence_bound:
            raise PerfectSeparation(
                f"coefficient norm exceeded {divergence_bound} (perfect separation?)"
            )
    else:
        p = expit(eta)
        grad = X.T @ (t - p)
        converged = bool(np.max(np.abs(grad)) <= tol * n)

    lo, hi = clip if clip is not None else (0.0, 1.0)
    fit = PropensityFit(alpha, np.empty(0), lo, hi, it, converged, ridge_used)
    return PropensityFit(alpha, predict_pi(fit, X), lo, hi, it, converged, ridge_used)


def predict_pi(fit: PropensityFit, design: np.ndarray) -> np.ndarray:
    """Clipped fitted probabilities ``logistic(design @ alpha)``."""
    X = np.asarray(design, dtype=float)
    if X.ndim != 2 or X.shape[1] != fit.alpha.shape[0]:
        raise ValueError(
            f"design has shape {X.shape}, expected (*, {fit.alpha.shape[0]})"
        )
    p = expit(X @ fit.alpha)
    if fit.clipped:
        p = np.clip(p, fit.clip_lo, fit.clip_hi)
    return p
