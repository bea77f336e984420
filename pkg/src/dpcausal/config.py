"""Flat ``key = value`` scenario files.

Keys are dotted. ``defaults.<field>`` applies to every scenario and
``scenario.<id>.<field>`` to one; scenarios keep the order in which their
id first appears. Fields::

    reps, master_seed, arm, ps_spec, or_spec, or_method, gamma_or, clip,
    estimators, tol, max_iter,
    dgp.x_dist, dgp.error, dgp.error_sd, dgp.mu1, dgp.mu0, dgp.n,
    contamination.mode, contamination.eps, contamination.scheme,
    contamination.outlier_shift, contamination.outlier_sd

``estimators`` is a comma-separated list of ``kind[:gamma][@eps_mode[=value]]``
tokens; ``@known`` without a value takes the scenario's contamination ratio.
Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

from .estimators import EPS_MODES, KINDS, EstimatorConfig
from .simulation import ContaminationConfig, DgpConfig, ScenarioConfig


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


_INT = {"reps", "master_seed", "arm", "max_iter", "dgp.n"}
_FLOAT = {
    "gamma_or", "tol", "dgp.error_sd", "dgp.mu1", "dgp.mu0",
    "contamination.eps", "contamination.outlier_shift", "contamination.outlier_sd",
}
_STR = {
    "ps_spec", "or_spec", "or_method", "dgp.x_dist", "dgp.error",
    "contamination.mode", "contamination.scheme",
}
FIELDS = _INT | _FLOAT | _STR | {"clip", "estimators"}


@dataclass(frozen=True)
class EstimatorToken:
    config: EstimatorConfig
    eps_from_scenario: bool = False


def parse_estimator(token: str) -> EstimatorToken:
    """``dp_ipw:0.5``, ``eps_dp_dr:1@known``, ``eps_dp_dr:1@known=0.2``, ``firpo_median``."""
    text = token.strip()
    eps_mode, eps_value, from_scenario = "zero", 0.0, False
    if "@" in text:
        text, mode = text.split("@", 1)
        if "=" in mode:
            mode, val = mode.split("=", 1)
            eps_value = float(val)
        elif mode == "known":
            from_scenario = True
        if mode not in EPS_MODES:
            raise ValueError(f"unknown eps mode {mode!r}")
        eps_mode = mode
    gamma = 0.0
    if ":" in text:
        text, g = text.split(":", 1)
        gamma = float(g)
    if text not in KINDS:
        raise ValueError(f"unknown estimator kind {text!r}")
    cfg = EstimatorConfig(text, gamma=gamma, eps_mode=eps_mode, eps_value=eps_value)
    return EstimatorToken(cfg, from_scenario)


def _convert(field: str, raw: str):
    if field in _INT:
        return int(raw)
    if field in _FLOAT:
        return float(raw)
    if field == "clip":
        if raw.lower() == "none":
            return None
        lo, hi = (float(v) for v in raw.split(","))
        return (lo, hi)
    if field == "estimators":
        toks = [t for t in raw.split(",") if t.strip()]
        if not toks:
            raise ValueError("empty estimator list")
        return tuple(parse_estimator(t) for t in toks)
    return raw


def parse_config(text: str) -> list[ScenarioConfig]:
    defaults: dict = {}
    scenarios: dict[str, dict] = {}
    where: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("defaults."):
            target, field = defaults, key[len("defaults."):]
        elif key.startswith("scenario."):
            rest = key[len("scenario."):]
            if "." not in rest:
                raise ConfigError("missing field after scenario id", key, lineno)
            sid, field = rest.split(".", 1)
            if not sid:
                raise ConfigError("empty scenario id", key, lineno)
            target = scenarios.setdefault(sid, {})
        else:
            raise ConfigError("keys must start with 'defaults.' or 'scenario.'", key, lineno)
        if field not in FIELDS:
            raise ConfigError(f"unknown field {field!r}", key, lineno)
        try:
            target[field] = _convert(field, value)
        except ValueError as exc:
            raise ConfigError(str(exc), key, lineno) from None
        where[(id(target), field)] = (key, lineno)
    if not scenarios:
        raise ConfigError("no scenario.<id> entries")

    out = []
    for sid, own in scenarios.items():
        merged = {**defaults, **own}

        def origin(field):
            src = own if field in own else defaults
            return where.get((id(src), field), (None, None))

        try:
            dgp = DgpConfig(**{f[4:]: merged[f] for f in merged if f.startswith("dgp.")})
        except (TypeError, ValueError) as exc:
            k, ln = origin(next((f for f in merged if f.startswith("dgp.")), "dgp.n"))
            raise ConfigError(str(exc), k, ln) from None
        try:
            cont = ContaminationConfig(
                **{f[14:]: merged[f] for f in merged if f.startswith("contamination.")}
            )
        except (TypeError, ValueError) as exc:
            k, ln = origin(next((f for f in merged if f.startswith("contamination.")), "contamination.mode"))
            raise ConfigError(str(exc), k, ln) from None
        if "estimators" not in merged:
            raise ConfigError(f"scenario {sid!r} lists no estimators", f"scenario.{sid}.estimators")
        solver = {f: merged[f] for f in ("tol", "max_iter") if f in merged}
        ests = []
        for tok in merged["estimators"]:
            cfg = replace(tok.config, **solver)
            if tok.eps_from_scenario:
                cfg = replace(cfg, eps_value=cont.eps)
            ests.append(cfg)
        kwargs = {
            f: merged[f]
            for f in ("reps", "master_seed", "arm", "ps_spec", "or_spec", "or_method", "gamma_or", "clip")
            if f in merged
        }
        try:
            out.append(ScenarioConfig(sid, dgp, cont, estimators=tuple(ests), **kwargs))
        except ValueError as exc:
            raise ConfigError(f"scenario {sid!r}: {exc}") from None
    return out


def load_config(path) -> tuple[list[ScenarioConfig], str]:
    """Scenarios and the SHA-256 digest of the file bytes."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config is not UTF-8: {exc}") from None
    return parse_config(text), hashlib.sha256(data).hexdigest()
