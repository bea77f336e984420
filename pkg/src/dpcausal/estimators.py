"""Potential-outcome mean estimators and their standard errors.

Every estimator targets ``E[Y(arm)]``. Arm 0 is handled by mirroring:
the arm indicator becomes ``1 - T`` and the propensity ``1 - pi``.

The density-power kinds solve a weighted-mean fixed point (IPW) or its
augmented version (DR) with the Gaussian weight scale re-estimated by a
MADN at every iterate unless a fixed scale is configured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, NamedTuple

import numpy as np

from ._backend import kernels
from .data import Dataset, DesignSpec, build_design, require_arms
from .outcome import (
    OutcomePrediction,
    fit_dp_unnormalized,
    fit_gaussian_mle,
    predict_outcome,
)
from .propensity import DEFAULT_CLIP, fit_logistic
from .weighting import MADN_CONST, arm_terms, dr_median

KINDS = (
    "naive_ipw",
    "naive_dr",
    "firpo_median",
    "zhang_ipw_median",
    "zhang_dr_median",
    "dp_ipw",
    "dp_dr",
    "eps_dp_dr",
)
DP_KINDS = ("dp_ipw", "dp_dr", "eps_dp_dr")
DR_KINDS = ("naive_dr", "zhang_dr_median", "dp_dr", "eps_dp_dr")
EPS_MODES = ("zero", "known", "estimated")


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimatorConfig:
    """Which estimator to run and how to drive its solver.

    ``sigma_fixed=None`` re-estimates the weight scale at every iterate;
    a positive value freezes it. ``init`` overrides the robust starting
    point (used for warm starts along a gamma grid). ``zero_augmentation``
    drops the outcome-model term of the DR kinds.
    """

    kind: str
    gamma: float = 0.0
    eps_mode: str = "zero"
    eps_value: float = 0.0
    sigma_fixed: float | None = None
    tol: float = 1e-8
    max_iter: int = 500
    arm: int = 1
    init: float | None = None
    zero_augmentation: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be a finite non-negative number, got {self.gamma}")
        if self.eps_mode not in EPS_MODES:
            raise ValueError(f"eps_mode must be one of {EPS_MODES}, got {self.eps_mode!r}")
        if not 0.0 <= self.eps_value < 1.0:
            raise ValueError(f"known eps must lie in [0, 1), got {self.eps_value}")
        if self.sigma_fixed is not None and not self.sigma_fixed > 0:
            raise ValueError(f"fixed sigma must be positive, got {self.sigma_fixed}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be positive, got {self.max_iter}")
        if self.arm not in (0, 1):
            raise ValueError(f"arm must be 0 or 1, got {self.arm}")

    @property
    def label(self) -> str:
        if self.kind not in DP_KINDS:
            return self.kind
        tag = f"{self.kind}:{self.gamma:g}"
        if self.kind == "eps_dp_dr":
            tag += f"@{self.eps_mode}" + (f"={self.eps_value:g}" if self.eps_mode == "known" else "")
        return tag


@dataclass(frozen=True)
class EstimateResult:
    """Point estimate plus solver bookkeeping.

    ``trace`` holds ``(mu, sigma)`` after each iteration; ``init`` is the
    starting value. Non-iterative estimators have an empty trace.
    """

    mu_hat: float
    sigma_h: float = float("nan")
    iterations: int = 0
    converged: bool = True
    trace: tuple = ()
    init: float = float("nan")
    se: float | None = None
    flags: tuple[str, ...] = ()
    kind: str = ""
    arm: int = 1

    @property
    def last_step(self) -> float:
        if not self.trace:
            return 0.0
        prev = self.trace[-2][0] if len(self.trace) > 1 else self.init
        return abs(self.trace[-1][0] - prev)


@dataclass(frozen=True)
class Nuisances:
    """Fitted propensity and per-arm outcome predictions for every row."""

    pi_hat: np.ndarray
    outcome: Mapping[int, OutcomePrediction] = field(default_factory=dict)
    ps_fit: object = None
    or_fits: Mapping[int, object] = field(default_factory=dict)

    def prediction(self, arm: int) -> OutcomePrediction:
        try:
            return self.outcome[arm]
        except KeyError:
            raise EstimationError(f"no outcome model fitted for arm {arm}") from None


def _scale_floor(y: np.ndarray) -> float:
    s = float(np.max(np.abs(y))) if y.size else 0.0
    return 1e-6 * s if s > 0 else 1e-12


# -- baselines -----------------------------------------------------------------


def _arm_rows(dataset: Dataset, pi_hat, arm: int):
    ind, pt = arm_terms(dataset, pi_hat, arm)
    rows = ind == 1
    if not np.any(rows):
        raise EstimationError(f"treatment arm {arm} is empty")
    return ind, pt, rows


def naive_ipw(dataset: Dataset, pi_hat, arm: int = 1) -> EstimateResult:
    """Self-normalized inverse-probability-weighted mean of the arm."""
    _, pt, rows = _arm_rows(dataset, pi_hat, arm)
    w = 1.0 / pt[rows]
    mu = float(np.sum(w * dataset.y[rows]) / np.sum(w))
    return EstimateResult(mu, kind="naive_ipw", arm=arm)


def naive_dr(dataset: Dataset, pi_hat, outcome: OutcomePrediction, arm: int = 1) -> EstimateResult:
    """Augmented IPW mean, the exact root of the linear DR equation."""
    ind, pt, _ = _arm_rows(dataset, pi_hat, arm)
    u = np.asarray(outcome.u, dtype=float)
    mu = float(np.mean(ind * dataset.y / pt - (ind - pt) / pt * u))
    return EstimateResult(mu, kind="naive_dr", arm=arm)


def ipw_median(dataset: Dataset, pi_hat, arm: int = 1, kind: str = "firpo_median") -> EstimateResult:
    """Weighted median of the arm outcomes with weights ``1/pi``.

    Firpo's and Zhang's IPW medians coincide under the tie rule used here.
    """
    _, pt, rows = _arm_rows(dataset, pi_hat, arm)
    mu = kernels.weighted_median(dataset.y[rows], 1.0 / pt[rows])
    return EstimateResult(float(mu), kind=kind, arm=arm)


firpo_median = ipw_median


def zhang_ipw_median(dataset: Dataset, pi_hat, arm: int = 1) -> EstimateResult:
    return ipw_median(dataset, pi_hat, arm, kind="zhang_ipw_median")


def zhang_dr_median(
    dataset: Dataset, pi_hat, outcome: OutcomePrediction, arm: int = 1, augment: bool = True
) -> EstimateResult:
    """Median of the doubly robust CDF with Gaussian conditional CDFs."""
    _arm_rows(dataset, pi_hat, arm)
    try:
        root = dr_median(dataset, pi_hat, outcome, arm, augment)
    except ValueError as exc:
        raise EstimationError(str(exc)) from exc
    flags = ("cdf-rearranged",) if root.rearranged else ()
    return EstimateResult(root.value, kind="zhang_dr_median", arm=arm, flags=flags)


# -- density-power estimators --------------------------------------------------


def cond_moments(u, v2, mu: float, sigma: float, gamma: float, squared: bool = True):
    """``E[h(Y)^gamma | X]`` and ``E[h(Y)^gamma Y | X]`` for ``Y|X ~ N(u, v2)``.

    ``h`` is the ``N(mu, sigma^2)`` density. ``squared=False`` evaluates
    the exponent with the unsquared deviation ``mu - u``; this is wrong
    and exists only to compare against that variant.
    """
    u = np.asarray(u, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    sig2 = sigma * sigma
    s2 = sig2 + gamma * v2
    d = mu - u
    dev = d * d if squared else d
    m0 = (
        (2.0 * math.pi) ** (-gamma / 2.0)
        * sig2 ** ((1.0 - gamma) / 2.0)
        / np.sqrt(s2)
        * np.exp(-gamma * dev / (2.0 * s2))
    )
    m1 = m0 * (u * sig2 + gamma * mu * v2) / s2
    return m0, m1


def _eps_bar(config: EstimatorConfig, outcome: OutcomePrediction | None) -> float:
    if config.kind != "eps_dp_dr" or config.eps_mode == "zero":
        return 0.0
    if config.eps_mode == "known":
        return config.eps_value
    if outcome is None or outcome.eps_hat is None:
        raise EstimationError(
            "eps_mode=estimated needs an outcome fit that reports a contamination ratio"
        )
    return float(outcome.eps_hat)


def _solver_result(kind, arm, out, init, extra_flags=()):
    mu, sigma, it, converged, tmu, tsig = out[:6]
    flags = list(extra_flags)
    if len(out) > 6 and out[6]:
        flags.append("cdf-rearranged")
    if not converged:
        flags.append("not-converged")
    trace = tuple(zip(tmu[1:], tsig))
    return EstimateResult(
        float(mu), float(sigma), int(it), bool(converged), trace, float(init),
        flags=tuple(flags), kind=kind, arm=arm,
    )


def dp_ipw(dataset: Dataset, pi_hat, config: EstimatorConfig) -> EstimateResult:
    """Density-power IPW: root of ``sum T/pi h(Y)^gamma (Y - mu) = 0``.

    Starts from the IPW median. The scale is the IPW-MADN at each iterate
    unless ``config.sigma_fixed`` is set.
    """
    _, pt, rows = _arm_rows(dataset, pi_hat, config.arm)
    y = dataset.y[rows]
    bw = 1.0 / pt[rows]
    mu0 = config.init if config.init is not None else kernels.weighted_median(y, bw)
    sigma_fixed = config.sigma_fixed if config.sigma_fixed is not None else -1.0
    try:
        out = kernels.dp_ipw_solve(
            y, bw, float(config.gamma), float(mu0), float(sigma_fixed),
            float(config.tol), int(config.max_iter), _scale_floor(dataset.y),
        )
    except ValueError as exc:
        raise EstimationError(str(exc)) from exc
    return _solver_result("dp_ipw", config.arm, out, mu0)


def dp_dr(dataset: Dataset, pi_hat, outcome: OutcomePrediction, config: EstimatorConfig) -> EstimateResult:
    """Density-power DR, optionally with the ``(1 - eps)`` bias correction.

    Kind ``dp_dr`` ignores the eps mode; kind ``eps_dp_dr`` scales the
    augmentation by ``1 - eps`` with eps known, estimated by the outcome
    fit, or zero. Starts from the DR median; the scale is the DR-MADN at
    each iterate unless fixed.
    """
    ind, pt, rows = _arm_rows(dataset, pi_hat, config.arm)
    y = dataset.y[rows]
    bw = 1.0 / pt[rows]
    n = dataset.n
    augment = not config.zero_augmentation
    if augment:
        u = np.asarray(outcome.u, dtype=float)
        v2 = np.asarray(outcome.v2, dtype=float)
        eps = _eps_bar(config, outcome)
        w2 = (ind - pt) / pt * (1.0 - eps)
        mad_wind = bw / n
        mad_coef = -(ind - pt) / (n * pt)
        mad_target = 0.5
    else:
        u = v2 = w2 = np.zeros(n)
        mad_wind = bw
        mad_coef = np.zeros(0)
        mad_target = 0.5 * float(np.cumsum(bw)[-1])
    try:
        if config.init is not None:
            mu0 = float(config.init)
        elif augment:
            mu0 = dr_median(dataset, pi_hat, outcome, config.arm).value
        else:
            mu0 = kernels.weighted_median(y, bw)
        sigma_fixed = config.sigma_fixed if config.sigma_fixed is not None else -1.0
        out = kernels.dp_dr_solve(
            y, bw, u, v2, w2, float(config.gamma), mu0, float(sigma_fixed),
            float(config.tol), int(config.max_iter), _scale_floor(dataset.y),
            mad_wind, mad_coef, mad_target,
        )
    except ValueError as exc:
        msg = str(exc)
        if "denominator" in msg:
            raise EstimationError(msg + " [denominator-small]") from exc
        raise EstimationError(msg) from exc
    return _solver_result(config.kind, config.arm, out, mu0)


# -- dispatch ------------------------------------------------------------------


def estimate(dataset: Dataset, nuisances: Nuisances, config: EstimatorConfig) -> EstimateResult:
    """Run one configured estimator for ``config.arm``."""
    arm = config.arm
    pi_hat = nuisances.pi_hat
    kind = config.kind
    outcome = nuisances.prediction(arm) if kind in DR_KINDS and not config.zero_augmentation else None
    if kind == "naive_ipw":
        return naive_ipw(dataset, pi_hat, arm)
    if kind == "naive_dr":
        return naive_dr(dataset, pi_hat, outcome, arm)
    if kind in ("firpo_median", "zhang_ipw_median"):
        return ipw_median(dataset, pi_hat, arm, kind)
    if kind == "zhang_dr_median":
        if outcome is None:
            res = zhang_dr_median(dataset, pi_hat, None, arm, augment=False)
        else:
            res = zhang_dr_median(dataset, pi_hat, outcome, arm)
        return res
    if kind == "dp_ipw":
        return dp_ipw(dataset, pi_hat, config)
    return dp_dr(dataset, pi_hat, outcome, config)


class AteResult(NamedTuple):
    mu1: EstimateResult
    mu0: EstimateResult
    ate: float


def estimate_ate(dataset: Dataset, configs, nuisances: Nuisances) -> AteResult:
    """Both arm means and their difference.

    ``configs`` is one :class:`EstimatorConfig` (reused for both arms) or
    a mapping ``{1: cfg1, 0: cfg0}``.
    """
    require_arms(dataset, (0, 1))
    if isinstance(configs, EstimatorConfig):
        configs = {1: replace(configs, arm=1), 0: replace(configs, arm=0)}
    r1 = estimate(dataset, nuisances, configs[1])
    r0 = estimate(dataset, nuisances, configs[0])
    return AteResult(r1, r0, r1.mu_hat - r0.mu_hat)


# -- nuisance fitting ----------------------------------------------------------


def fit_nuisances(
    dataset: Dataset,
    ps_spec: DesignSpec,
    or_spec: DesignSpec | None = None,
    or_method: str = "mle",
    gamma_or: float = 0.5,
    outlier_mask=None,
    arms=(1, 0),
    clip=DEFAULT_CLIP,
) -> Nuisances:
    """Fit the propensity model and one outcome model per requested arm.

    ``or_method`` is ``mle``, ``masked_mle`` (drops ``outlier_mask`` rows)
    or ``dp_unnormalized``. Outcome models use only the rows of their arm.
    """
    ps = fit_logistic(build_design(dataset, ps_spec), dataset.t, clip=clip)
    outcome, fits = {}, {}
    if or_spec is not None:
        Xall = build_design(dataset, or_spec)
        for arm in arms:
            rows = dataset.t == arm
            Xa, ya = Xall[rows], dataset.y[rows]
            if or_method == "mle":
                fit = fit_gaussian_mle(Xa, ya, arm=arm)
            elif or_method == "masked_mle":
                if outlier_mask is None:
                    raise ValueError("masked_mle needs an outlier mask")
                keep = ~np.asarray(outlier_mask, bool)[rows]
                fit = fit_gaussian_mle(Xa, ya, row_mask=keep, arm=arm)
            elif or_method == "dp_unnormalized":
                fit = fit_dp_unnormalized(Xa, ya, gamma_or=gamma_or, arm=arm)
            else:
                raise ValueError(f"unknown outcome method {or_method!r}")
            fits[arm] = fit
            outcome[arm] = predict_outcome(fit, Xall)
    return Nuisances(ps.pi_hat, outcome, ps, fits)


# -- estimating functions and standard errors ---------------------------------


def estimating_function(
    kind: str,
    dataset: Dataset,
    pi_hat,
    outcome: OutcomePrediction | None,
    mu: float,
    sigma: float = 1.0,
    gamma: float = 0.0,
    eps: float = 0.0,
    arm: int = 1,
) -> np.ndarray:
    """Per-unit estimating function evaluated at ``mu``.

    ``naive_ipw``: ``T/pi (Y - mu)``; ``naive_dr`` adds
    ``-(T - pi)/pi (u - mu)``; the density-power kinds weight by
    ``h(Y)^gamma`` and augment with ``E[h^gamma (Y - mu) | X]`` scaled by
    ``1 - eps`` (eps only used for ``eps_dp_dr``).
    """
    ind, pt = arm_terms(dataset, pi_hat, arm)
    y = dataset.y
    if kind in ("naive_ipw", "naive_dr"):
        psi = ind / pt * (y - mu)
        if kind == "naive_dr":
            psi = psi - (ind - pt) / pt * (np.asarray(outcome.u) - mu)
        return psi
    if kind not in DP_KINDS:
        raise ValueError(f"no estimating function for kind {kind!r}")
    z = (y - mu) / sigma
    h_g = np.exp(gamma * (-0.5 * math.log(2.0 * math.pi * sigma**2) - 0.5 * z * z))
    psi = ind / pt * h_g * (y - mu)
    if kind == "dp_ipw":
        return psi
    m0, m1 = cond_moments(outcome.u, outcome.v2, mu, sigma, gamma)
    scale = 1.0 - (eps if kind == "eps_dp_dr" else 0.0)
    return psi - (ind - pt) / pt * scale * (m1 - mu * m0)


def estimating_derivative(
    kind: str,
    dataset: Dataset,
    pi_hat,
    outcome: OutcomePrediction | None,
    mu: float,
    sigma: float = 1.0,
    gamma: float = 0.0,
    eps: float = 0.0,
    arm: int = 1,
) -> np.ndarray:
    """Per-unit derivative of :func:`estimating_function` in ``mu`` (sigma held fixed)."""
    ind, pt = arm_terms(dataset, pi_hat, arm)
    y = dataset.y
    if kind in ("naive_ipw", "naive_dr"):
        d = -ind / pt
        if kind == "naive_dr":
            d = d + (ind - pt) / pt
        return d
    if kind not in DP_KINDS:
        raise ValueError(f"no estimating function for kind {kind!r}")
    z = (y - mu) / sigma
    h_g = np.exp(gamma * (-0.5 * math.log(2.0 * math.pi * sigma**2) - 0.5 * z * z))
    d = ind / pt * h_g * (gamma * z * z - 1.0)
    if kind == "dp_ipw":
        return d
    # h^gamma times the N(u, v2) density is m0 times a N(m, tau2) density
    u = np.asarray(outcome.u, dtype=float)
    v2 = np.asarray(outcome.v2, dtype=float)
    m0, m1 = cond_moments(u, v2, mu, sigma, gamma)
    s2 = sigma**2 + gamma * v2
    m = (u * sigma**2 + gamma * mu * v2) / s2
    tau2 = sigma**2 * v2 / s2
    e_d = m0 * (gamma * (tau2 + (m - mu) ** 2) / sigma**2 - 1.0)
    scale = 1.0 - (eps if kind == "eps_dp_dr" else 0.0)
    return d - (ind - pt) / pt * scale * e_d


def sandwich_se_mu(
    dataset: Dataset,
    pi_hat,
    outcome: OutcomePrediction | None,
    config: EstimatorConfig,
    mu_hat: float,
    sigma: float = 1.0,
    j_threshold: float = 1e-10,
) -> float:
    """Sandwich SE of ``mu`` with the nuisances and the weight scale held fixed."""
    eps = _eps_bar(config, outcome)
    args = (config.kind, dataset, pi_hat, outcome, mu_hat, sigma, config.gamma, eps, config.arm)
    J = float(np.mean(estimating_derivative(*args)))
    K = float(np.mean(estimating_function(*args) ** 2))
    if abs(J) < j_threshold:
        raise EstimationError(f"derivative of the estimating equation is near zero ({J:.3g})")
    return math.sqrt(K / (J * J * dataset.n))


def replicate_rng(seed: int, b: int) -> np.random.Generator:
    """Independent stream for bootstrap replicate ``b``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(b,))))


class BootstrapResult(NamedTuple):
    se: float
    estimates: np.ndarray
    dropped: int


def bootstrap_se(
    closure: Callable[[Dataset], float],
    dataset: Dataset,
    B: int,
    seed: int,
    max_drop_fraction: float = 0.1,
) -> BootstrapResult:
    """Nonparametric row bootstrap of ``closure``.

    ``closure`` refits everything it needs on the resampled dataset.
    Failed replicates are dropped and counted; more than
    ``max_drop_fraction`` failures is an error.
    """
    if B < 2:
        raise ValueError(f"need at least 2 bootstrap replicates, got {B}")
    n = dataset.n
    est, dropped = [], 0
    for b in range(B):
        rows = replicate_rng(seed, b).integers(0, n, size=n)
        try:
            val = float(closure(dataset.take(rows)))
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError):
            dropped += 1
            continue
        if not math.isfinite(val):
            dropped += 1
            continue
        est.append(val)
    if dropped > max_drop_fraction * B:
        raise EstimationError(f"{dropped} of {B} bootstrap replicates failed")
    arr = np.asarray(est)
    return BootstrapResult(float(np.std(arr, ddof=1)), arr, dropped)


__all__ = [
    "AteResult",
    "BootstrapResult",
    "DP_KINDS",
    "EstimateResult",
    "EstimationError",
    "EstimatorConfig",
    "KINDS",
    "MADN_CONST",
    "Nuisances",
    "bootstrap_se",
    "cond_moments",
    "dp_dr",
    "dp_ipw",
    "estimate",
    "estimate_ate",
    "estimating_derivative",
    "estimating_function",
    "firpo_median",
    "fit_nuisances",
    "ipw_median",
    "naive_dr",
    "naive_ipw",
    "replicate_rng",
    "sandwich_se_mu",
    "zhang_dr_median",
    "zhang_ipw_median",
]
