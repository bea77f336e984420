"""Data-generating process, outlier contamination and replication loops.

Each replicate draws from its own counter-based stream derived from
``(master_seed, rep, purpose)``, so results do not depend on how many
replicates run, in which order, or on how many worker processes.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from .data import Dataset, DesignSpec, validate_dataset
from .estimators import (
    DR_KINDS,
    EstimateResult,
    EstimatorConfig,
    Nuisances,
    estimate,
    fit_nuisances,
)

SQRT3 = math.sqrt(3.0)
GENERATE, CONTAMINATE = 0, 1


def stream(master_seed: int, rep: int, purpose: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(rep, purpose)))
    )


@dataclass(frozen=True)
class DgpConfig:
    x_dist: str = "gaussian"
    error: str = "gaussian"
    error_sd: float = math.sqrt(0.72)
    mu1: float = 3.0
    mu0: float = 0.0
    outcome_coefs: tuple[float, float] = (1.2, 0.3)
    ps_coefs: tuple[float, float] = (0.8, 0.2)
    n: int = 100

    def __post_init__(self):
        if self.x_dist not in ("gaussian", "uniform"):
            raise ValueError(f"x_dist must be gaussian or uniform, got {self.x_dist!r}")
        if self.error not in ("gaussian", "cauchy"):
            raise ValueError(f"error must be gaussian or cauchy, got {self.error!r}")
        if self.n < 2:
            raise ValueError(f"n must be at least 2, got {self.n}")

    def truth(self, arm: int) -> float:
        return self.mu1 if arm == 1 else self.mu0


@dataclass(frozen=True)
class ContaminationConfig:
    """Outcome outliers ``N(mu_t + outlier_shift, outlier_sd^2)``.

    ``heterogeneous`` uses ratio ``1.5 eps`` where ``X1 + X2 <= 0`` and
    ``0.5 eps`` elsewhere.
    """

    mode: str = "none"
    eps: float = 0.0
    outlier_shift: float = 15.0
    outlier_sd: float = 1.0
    scheme: str = "bernoulli"

    def __post_init__(self):
        if self.mode not in ("none", "homogeneous", "heterogeneous"):
            raise ValueError(f"unknown contamination mode {self.mode!r}")
        if self.scheme not in ("bernoulli", "exact_count"):
            raise ValueError(f"unknown contamination scheme {self.scheme!r}")
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"eps must lie in [0, 1], got {self.eps}")
        if self.mode == "heterogeneous" and 1.5 * self.eps > 1.0:
            raise ValueError(f"heterogeneous eps must be at most 2/3, got {self.eps}")
        if self.mode == "heterogeneous" and self.scheme == "exact_count":
            raise ValueError("heterogeneous contamination needs the bernoulli scheme")
        if self.outlier_sd < 0:
            raise ValueError(f"outlier_sd must be non-negative, got {self.outlier_sd}")


CORRECT_SPEC = DesignSpec((0, 1))
INCORRECT_SPEC = DesignSpec((1,))
SPECS = {"correct": CORRECT_SPEC, "incorrect": INCORRECT_SPEC}
OR_METHODS = ("mle_masked_oracle", "mle", "dp_unnormalized")


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: str
    dgp: DgpConfig = field(default_factory=DgpConfig)
    contamination: ContaminationConfig = field(default_factory=ContaminationConfig)
    ps_spec: str = "correct"
    or_spec: str = "correct"
    or_method: str = "mle_masked_oracle"
    gamma_or: float = 0.5
    estimators: tuple[EstimatorConfig, ...] = ()
    reps: int = 100
    master_seed: int = 0
    arm: int = 1
    clip: tuple[float, float] | None = (0.01, 0.99)

    def __post_init__(self):
        if self.dgp.error == "cauchy" and self.contamination.mode != "none":
            raise ValueError("the Cauchy error variant runs without outlier injection")
        for name in ("ps_spec", "or_spec"):
            if getattr(self, name) not in SPECS:
                raise ValueError(f"{name} must be correct or incorrect, got {getattr(self, name)!r}")
        if self.or_method not in OR_METHODS:
            raise ValueError(f"or_method must be one of {OR_METHODS}, got {self.or_method!r}")
        if self.reps < 1:
            raise ValueError(f"reps must be positive, got {self.reps}")
        if self.arm not in (0, 1):
            raise ValueError(f"arm must be 0 or 1, got {self.arm}")

    @property
    def truth(self) -> float:
        return self.dgp.truth(self.arm)


class Generated(NamedTuple):
    dataset: Dataset
    y1: np.ndarray
    y0: np.ndarray
    truth: dict


def generate(dgp: DgpConfig, rng: np.random.Generator) -> Generated:
    """One sample of ``dgp.n`` units; both potential outcomes share the error."""
    n = dgp.n
    if dgp.x_dist == "gaussian":
        x = rng.standard_normal((n, 2))
    else:
        x = rng.uniform(-SQRT3, SQRT3, size=(n, 2))
    if dgp.error == "gaussian":
        e = dgp.error_sd * rng.standard_normal(n)
    else:
        e = rng.standard_cauchy(n)
    p = expit(x @ np.asarray(dgp.ps_coefs))
    t = (rng.random(n) < p).astype(np.int64)
    signal = x @ np.asarray(dgp.outcome_coefs) + e
    y1 = dgp.mu1 + signal
    y0 = dgp.mu0 + signal
    y = np.where(t == 1, y1, y0)
    ds = validate_dataset(y, t, x, ("x1", "x2"))
    return Generated(ds, y1, y0, {1: dgp.mu1, 0: dgp.mu0})


def contamination_ratio(dataset: Dataset, cont: ContaminationConfig) -> np.ndarray:
    """Per-unit replacement probability."""
    n = dataset.n
    if cont.mode == "none":
        return np.zeros(n)
    if cont.mode == "homogeneous":
        ratio = np.full(n, cont.eps)
    else:
        if dataset.p < 2:
            raise ValueError("heterogeneous contamination needs two covariates")
        low = dataset.x[:, 0] + dataset.x[:, 1] <= 0
        ratio = np.where(low, 1.5 * cont.eps, 0.5 * cont.eps)
    if np.any((ratio < 0) | (ratio > 1)):
        raise ValueError(f"per-unit contamination ratio outside [0, 1] for eps={cont.eps}")
    return ratio


def exact_count(eps: float, n: int) -> int:
    """``eps * n`` rounded half up."""
    return int(math.floor(eps * n + 0.5))


def draw_outlier_mask(dataset: Dataset, cont: ContaminationConfig, rng: np.random.Generator):
    """Outlier mask plus standard-normal draws for every unit (used or not)."""
    ratio = contamination_ratio(dataset, cont)
    eps = cont.eps if cont.mode != "none" else 0.0
    return draw_mask(ratio, eps, cont.scheme, rng)


def draw_mask(ratio, eps: float, scheme: str, rng: np.random.Generator):
    """Mask from per-unit ratios (bernoulli) or ``exact_count(eps, n)`` rows."""
    ratio = np.asarray(ratio, dtype=float)
    n = ratio.shape[0]
    if scheme == "bernoulli":
        mask = rng.random(n) < ratio
    else:
        mask = np.zeros(n, bool)
        k = exact_count(eps, n)
        if k:
            mask[rng.choice(n, size=k, replace=False)] = True
    z = rng.standard_normal(n)
    return mask, z


def contaminate(
    dataset: Dataset,
    cont: ContaminationConfig,
    rng: np.random.Generator,
    arm_means: dict | None = None,
    outlier_means: dict | None = None,
):
    """Replace outcomes of randomly selected units by outliers.

    The outlier mean for a unit in arm ``t`` is ``outlier_means[t]`` when
    given, else ``arm_means[t] + cont.outlier_shift``.

    Returns ``(dataset, mask)``; the dataset is unchanged when nothing is
    drawn.
    """
    mask, z = draw_outlier_mask(dataset, cont, rng)
    if not mask.any():
        return dataset, mask
    if outlier_means is None:
        if arm_means is None:
            raise ValueError("need arm means or explicit outlier means")
        outlier_means = {a: arm_means[a] + cont.outlier_shift for a in (0, 1)}
    centre = np.where(dataset.t == 1, outlier_means[1], outlier_means[0])
    y = np.where(mask, centre + cont.outlier_sd * z, dataset.y)
    return dataset.with_outcome(y), mask


# -- replication ----------------------------------------------------------------


class RepRow(NamedTuple):
    scenario_id: str
    estimator: str
    gamma: float
    rep: int
    estimate: float
    converged: bool
    iterations: int
    sigma_h: float
    flags: str
    error: str
    runtime_ms: float


def _needs_outcome(scenario: ScenarioConfig) -> bool:
    return any(e.kind in DR_KINDS and not e.zero_augmentation for e in scenario.estimators)


def simulate_rep(scenario: ScenarioConfig, rep: int):
    """Data, mask and nuisances for one replicate."""
    g = generate(scenario.dgp, stream(scenario.master_seed, rep, GENERATE))
    ds, mask = contaminate(
        g.dataset, scenario.contamination, stream(scenario.master_seed, rep, CONTAMINATE),
        arm_means=g.truth,
    )
    method = {"mle_masked_oracle": "masked_mle"}.get(scenario.or_method, scenario.or_method)
    nuis = fit_nuisances(
        ds,
        SPECS[scenario.ps_spec],
        SPECS[scenario.or_spec] if _needs_outcome(scenario) else None,
        or_method=method,
        gamma_or=scenario.gamma_or,
        outlier_mask=mask,
        arms=(scenario.arm,),
        clip=scenario.clip,
    )
    return ds, mask, nuis


def run_rep(scenario: ScenarioConfig, rep: int) -> list[RepRow]:
    rows = []
    try:
        ds, _, nuis = simulate_rep(scenario, rep)
        fail = ""
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        ds = nuis = None
        fail = f"nuisance: {exc}"
    for est in scenario.estimators:
        cfg = replace(est, arm=scenario.arm)
        if fail:
            rows.append(RepRow(scenario.scenario_id, cfg.label, cfg.gamma, rep, math.nan,
                               False, 0, math.nan, "", fail, 0.0))
            continue
        t0 = time.perf_counter()
        try:
            res: EstimateResult = estimate(ds, nuis, cfg)
            err = ""
        except (ValueError, RuntimeError) as exc:
            res, err = None, str(exc)
        ms = 1e3 * (time.perf_counter() - t0)
        if res is None:
            rows.append(RepRow(scenario.scenario_id, cfg.label, cfg.gamma, rep, math.nan,
                               False, 0, math.nan, "", err, ms))
        else:
            rows.append(RepRow(scenario.scenario_id, cfg.label, cfg.gamma, rep, res.mu_hat,
                               res.converged, res.iterations, res.sigma_h,
                               ";".join(res.flags), "", ms))
    return rows


def _run_chunk(args):
    scenario, reps = args
    return [run_rep(scenario, r) for r in reps]


def default_threads() -> int:
    raw = os.environ.get("DPCAUSAL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"DPCAUSAL_THREADS must be an integer, got {raw!r}") from None


def run_reps(scenario: ScenarioConfig, threads: int | None = None) -> list[RepRow]:
    """Every replicate row, in rep order, serial or over worker processes."""
    threads = default_threads() if threads is None else max(1, int(threads))
    reps = list(range(scenario.reps))
    if threads == 1 or scenario.reps < 2:
        per_rep = [run_rep(scenario, r) for r in reps]
    else:
        size = max(1, math.ceil(len(reps) / (threads * 4)))
        chunks = [(scenario, reps[i:i + size]) for i in range(0, len(reps), size)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            per_rep = [rows for chunk in pool.map(_run_chunk, chunks) for rows in chunk]
    return [row for rows in per_rep for row in rows]


@dataclass(frozen=True)
class EstimatorSummary:
    estimator: str
    gamma: float
    mean: float
    sd: float
    rmse: float
    mean_runtime_ms: float
    convergence_rate: float
    n_ok: int
    n_failed: int


@dataclass(frozen=True)
class ScenarioSummary:
    scenario_id: str
    truth: float
    reps: int
    estimators: tuple[EstimatorSummary, ...]

    def get(self, label: str) -> EstimatorSummary:
        for s in self.estimators:
            if s.estimator == label:
                return s
        raise KeyError(label)


def summarize(scenario: ScenarioConfig, rows: Sequence[RepRow]) -> ScenarioSummary:
    """Mean, SD, RMSE per estimator over successful replicates.

    ``rmse^2 == (mean - truth)^2 + sd^2 (k - 1) / k`` with ``k`` the
    number of successful replicates.
    """
    truth = scenario.truth
    out = []
    for est in scenario.estimators:
        label = replace(est, arm=scenario.arm).label
        mine = [r for r in rows if r.estimator == label]
        ok = [r for r in mine if not r.error and math.isfinite(r.estimate)]
        vals = np.array([r.estimate for r in ok])
        k = vals.size
        if k:
            mean = float(np.mean(vals))
            sd = float(np.std(vals, ddof=1)) if k > 1 else 0.0
            rmse = float(np.sqrt(np.mean((vals - truth) ** 2)))
        else:
            mean = sd = rmse = math.nan
        conv = sum(1 for r in ok if r.converged) / len(mine) if mine else math.nan
        rt = float(np.mean([r.runtime_ms for r in mine])) if mine else math.nan
        out.append(EstimatorSummary(label, est.gamma, mean, sd, rmse, rt, conv, k, len(mine) - k))
    return ScenarioSummary(scenario.scenario_id, truth, scenario.reps, tuple(out))


class ScenarioAborted(RuntimeError):
    pass


def run_scenario(scenario: ScenarioConfig, threads: int | None = None):
    """Per-replicate rows and the summary for one scenario.

    Raises :class:`ScenarioAborted` when no replicate produced any
    estimate.
    """
    rows = run_reps(scenario, threads)
    if rows and all(r.error for r in rows):
        raise ScenarioAborted(f"every replicate failed; first error: {rows[0].error}")
    return rows, summarize(scenario, rows)


# -- gamma paths -----------------------------------------------------------------


class GammaPath(NamedTuple):
    gammas: tuple
    results: tuple
    stability_gamma: float | None


def stability_point(gammas, mus, sigmas, rel: float = 0.05):
    """Smallest gamma after which successive estimates move at most ``rel * sigma``.

    The last grid point alone does not count, so a grid of one point, or
    a path still moving at its end, has no stability point (``None``).
    """
    k = len(gammas)
    ok = [abs(mus[j + 1] - mus[j]) <= rel * sigmas[j + 1] for j in range(k - 1)]
    for start in range(k - 1):
        if all(ok[start:]):
            return gammas[start]
    return None


def gamma_path(
    dataset: Dataset,
    nuisances: Nuisances,
    kind: str,
    gamma_grid,
    base: EstimatorConfig | None = None,
) -> GammaPath:
    """Estimates along an increasing gamma grid, warm-started at the previous estimate."""
    grid = [float(g) for g in gamma_grid]
    if not grid:
        raise ValueError("empty gamma grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("gamma grid must be strictly increasing")
    base = base if base is not None else EstimatorConfig(kind)
    results, init = [], base.init
    for g in grid:
        res = estimate(dataset, nuisances, replace(base, kind=kind, gamma=g, init=init))
        results.append(res)
        init = res.mu_hat
    mus = [r.mu_hat for r in results]
    sig = [r.sigma_h for r in results]
    return GammaPath(tuple(grid), tuple(results), stability_point(grid, mus, sig))
