"""System configuration: model constants, learner hyperparameters, strict JSON parsing.

The config file is strict JSON.  Model constants have no defaults and must all
be present; learner hyperparameters live under the "learner" key and fall back
to the documented defaults below.  Unknown keys anywhere are an error, and all
validation failures are reported together with their field paths.

Schema (top level)::

    B, M            total subchannels / total edge VMs (int)
    b, m            per-service caps on subchannels / VMs (int, b<=B, m<=M)
    P               number of priority classes (int >= 1)
    lambda          arrival rate per priority, length P, all > 0
    mu_edge         base edge completion rate per priority, length P, all > 0
    mu_cloud        base cloud completion rate per priority, length P, all > 0
    k_c, k_e, k_r   lump reward for cloud accept / edge accept, reject penalty
    c_c, c_e        per-VM per-unit-time operating cost (cloud, edge), >= 0
    w_edge          b x m nonnegative constraint weights
    w_cloud         length-b nonnegative constraint weights
    alpha           length-P constraint bounds, >= 0
    cost_pairing    "prose" (default) or "as-printed"; see holding_cost_rate
    rate_overrides  optional list of {"location","p","i","j","rate"} entries
                    replacing the per-service completion rate of one class
    learner         optional block, see LearnerConfig
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields

__all__ = [
    "ConfigError",
    "LearnerConfig",
    "RateOverride",
    "SystemConfig",
    "config_hash",
    "parse_config",
    "parse_config_dict",
]


class ConfigError(ValueError):
    """Raised when a configuration file is malformed or violates an invariant."""

    def __init__(self, issues):
        if isinstance(issues, str):
            issues = [issues]
        self.issues = list(issues)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.issues))


@dataclass(frozen=True)
class RateOverride:
    """Replaces the completion rate of one service class.

    `rate` is the full per-service rate (it is not multiplied by the VM count),
    so subchannel- or VM-dependent holding times can be modelled directly.
    `j` is required for edge overrides and must be absent for cloud ones.
    """

    location: str  # "edge" | "cloud"
    p: int
    i: int
    rate: float
    j: int | None = None


# Learner defaults.  Exponents satisfy 0.5 < ea < eb < ec <= 1 so the four
# step-size sequences are square-summable but not summable, with
# b(n)/a(n) -> 0 and c(n)/b(n) -> 0.
@dataclass(frozen=True)
class LearnerConfig:
    C: float = 1.0
    lam_w: float = 0.8
    lam_theta: float = 0.8
    a0: float = 0.05
    b0: float = 0.01
    c0: float = 0.01
    ea: float = 0.55
    eb: float = 0.70
    ec: float = 0.85
    theta_max: float = 50.0
    gamma_max: float = 100.0
    hidden_policy: tuple[int, ...] = (64, 64)
    hidden_value: tuple[int, ...] = (64, 64)
    seed: int = 0
    smdp_correction: bool = False
    metric_cadence: int = 100
    metric_window: int = 5000
    checkpoint_cadence: int = 0
    eval_horizon: int = 10000


@dataclass(frozen=True)
class SystemConfig:
    B: int
    M: int
    b: int
    m: int
    P: int
    lam: tuple[float, ...]
    mu_edge: tuple[float, ...]
    mu_cloud: tuple[float, ...]
    k_c: float
    k_e: float
    k_r: float
    c_c: float
    c_e: float
    w_edge: tuple[tuple[float, ...], ...]
    w_cloud: tuple[float, ...]
    alpha: tuple[float, ...]
    cost_pairing: str = "prose"
    rate_overrides: tuple[RateOverride, ...] = ()
    learner: LearnerConfig = field(default_factory=LearnerConfig)

    @property
    def action_count(self) -> int:
        """Size of the decision-action index set: reject + b*m edge + b cloud."""
        return 1 + self.b * self.m + self.b

    def validate(self) -> None:
        issues = _validate(self)
        if issues:
            raise ConfigError(issues)


_MODEL_KEYS = {
    "B", "M", "b", "m", "P", "lambda", "mu_edge", "mu_cloud",
    "k_c", "k_e", "k_r", "c_c", "c_e", "w_edge", "w_cloud", "alpha",
}
_OPTIONAL_KEYS = {"cost_pairing", "rate_overrides", "learner"}
_LEARNER_KEYS = {f.name for f in fields(LearnerConfig)}
_OVERRIDE_KEYS = {"location", "p", "i", "j", "rate"}


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _vector(raw, name, length, issues) -> tuple[float, ...]:
    if not isinstance(raw, list) or len(raw) != length or not all(_is_num(v) for v in raw):
        issues.append(f"{name}: expected a list of {length} finite numbers")
        return tuple(float("nan") for _ in range(length))
    return tuple(float(v) for v in raw)


def parse_config_dict(raw: dict) -> SystemConfig:
    """Builds a validated SystemConfig from an already-decoded JSON object."""
    issues: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a JSON object")

    unknown = set(raw) - _MODEL_KEYS - _OPTIONAL_KEYS
    for key in sorted(unknown):
        issues.append(f"{key}: unknown key")
    missing = _MODEL_KEYS - set(raw)
    for key in sorted(missing):
        issues.append(f"{key}: missing required key")
    if issues:
        raise ConfigError(issues)

    for key in ("B", "M", "b", "m", "P"):
        if not _is_int(raw[key]):
            issues.append(f"{key}: expected an integer")
    if issues:
        raise ConfigError(issues)

    P = raw["P"]
    b, m = raw["b"], raw["m"]
    lam = _vector(raw["lambda"], "lambda", P, issues)
    mu_edge = _vector(raw["mu_edge"], "mu_edge", P, issues)
    mu_cloud = _vector(raw["mu_cloud"], "mu_cloud", P, issues)
    alpha = _vector(raw["alpha"], "alpha", P, issues)
    w_cloud = _vector(raw["w_cloud"], "w_cloud", b, issues)

    w_edge_raw = raw["w_edge"]
    if (
        not isinstance(w_edge_raw, list)
        or len(w_edge_raw) != b
        or not all(isinstance(row, list) and len(row) == m for row in w_edge_raw)
    ):
        issues.append(f"w_edge: expected a {b} x {m} matrix")
        w_edge: tuple[tuple[float, ...], ...] = ()
    else:
        w_edge = tuple(_vector(row, f"w_edge[{r}]", m, issues) for r, row in enumerate(w_edge_raw))

    for key in ("k_c", "k_e", "k_r", "c_c", "c_e"):
        if not _is_num(raw[key]):
            issues.append(f"{key}: expected a finite number")

    cost_pairing = raw.get("cost_pairing", "prose")
    if cost_pairing not in ("prose", "as-printed"):
        issues.append('cost_pairing: expected "prose" or "as-printed"')

    overrides = _parse_overrides(raw.get("rate_overrides", []), issues)
    learner = _parse_learner(raw.get("learner", {}), issues)
    if issues:
        raise ConfigError(issues)

    cfg = SystemConfig(
        B=raw["B"], M=raw["M"], b=b, m=m, P=P,
        lam=lam, mu_edge=mu_edge, mu_cloud=mu_cloud,
        k_c=float(raw["k_c"]), k_e=float(raw["k_e"]), k_r=float(raw["k_r"]),
        c_c=float(raw["c_c"]), c_e=float(raw["c_e"]),
        w_edge=w_edge, w_cloud=w_cloud, alpha=alpha,
        cost_pairing=cost_pairing, rate_overrides=overrides, learner=learner,
    )
    cfg.validate()
    return cfg


def _parse_overrides(raw, issues) -> tuple[RateOverride, ...]:
    if not isinstance(raw, list):
        issues.append("rate_overrides: expected a list")
        return ()
    out = []
    for k, entry in enumerate(raw):
        path = f"rate_overrides[{k}]"
        if not isinstance(entry, dict):
            issues.append(f"{path}: expected an object")
            continue
        for key in sorted(set(entry) - _OVERRIDE_KEYS):
            issues.append(f"{path}.{key}: unknown key")
        loc = entry.get("location")
        if loc not in ("edge", "cloud"):
            issues.append(f'{path}.location: expected "edge" or "cloud"')
            continue
        if not (_is_int(entry.get("p")) and _is_int(entry.get("i")) and _is_num(entry.get("rate"))):
            issues.append(f"{path}: p, i must be integers and rate a finite number")
            continue
        j = entry.get("j")
        if loc == "edge" and not _is_int(j):
            issues.append(f"{path}.j: required integer for edge overrides")
            continue
        if loc == "cloud" and j is not None:
            issues.append(f"{path}.j: not applicable to cloud overrides")
            continue
        out.append(RateOverride(location=loc, p=entry["p"], i=entry["i"],
                                rate=float(entry["rate"]), j=j))
    return tuple(out)


def _parse_learner(raw, issues) -> LearnerConfig:
    if not isinstance(raw, dict):
        issues.append("learner: expected an object")
        return LearnerConfig()
    for key in sorted(set(raw) - _LEARNER_KEYS):
        issues.append(f"learner.{key}: unknown key")
    kwargs = {}
    for f in fields(LearnerConfig):
        if f.name not in raw:
            continue
        v = raw[f.name]
        path = f"learner.{f.name}"
        if f.name in ("hidden_policy", "hidden_value"):
            if not isinstance(v, list) or not all(_is_int(x) for x in v):
                issues.append(f"{path}: expected a list of integers")
                continue
            kwargs[f.name] = tuple(v)
        elif f.name == "smdp_correction":
            if not isinstance(v, bool):
                issues.append(f"{path}: expected a boolean")
                continue
            kwargs[f.name] = v
        elif f.name in ("seed", "metric_cadence", "metric_window",
                        "checkpoint_cadence", "eval_horizon"):
            if not _is_int(v):
                issues.append(f"{path}: expected an integer")
                continue
            kwargs[f.name] = v
        else:
            if not _is_num(v):
                issues.append(f"{path}: expected a finite number")
                continue
            kwargs[f.name] = float(v)
    return LearnerConfig(**kwargs)


def _validate(cfg: SystemConfig) -> list[str]:
    issues: list[str] = []
    if cfg.P < 1:
        issues.append("P: must satisfy P >= 1")
    if not 1 <= cfg.b <= cfg.B:
        issues.append("b: must satisfy 1 <= b <= B")
    if not 1 <= cfg.m <= cfg.M:
        issues.append("m: must satisfy 1 <= m <= M")
    for name, vec in (("lambda", cfg.lam), ("mu_edge", cfg.mu_edge), ("mu_cloud", cfg.mu_cloud)):
        if any(not v > 0 for v in vec):
            issues.append(f"{name}: all rates must be > 0")
    for name, val in (("c_c", cfg.c_c), ("c_e", cfg.c_e)):
        if val < 0:
            issues.append(f"{name}: must be >= 0")
    if any(v < 0 for v in cfg.alpha):
        issues.append("alpha: must be >= 0")
    if any(v < 0 for row in cfg.w_edge for v in row):
        issues.append("w_edge: weights must be >= 0")
    if any(v < 0 for v in cfg.w_cloud):
        issues.append("w_cloud: weights must be >= 0")
    for ov in cfg.rate_overrides:
        path = "rate_overrides"
        if not 1 <= ov.p <= cfg.P:
            issues.append(f"{path}: p out of range [1, {cfg.P}]")
        if not 1 <= ov.i <= cfg.b:
            issues.append(f"{path}: i out of range [1, {cfg.b}]")
        if ov.location == "edge" and not 1 <= ov.j <= cfg.m:
            issues.append(f"{path}: j out of range [1, {cfg.m}]")
        if not ov.rate > 0:
            issues.append(f"{path}: rate must be > 0")

    lc = cfg.learner
    if not lc.C > 0:
        issues.append("learner.C: must be > 0")
    for name, val in (("lam_w", lc.lam_w), ("lam_theta", lc.lam_theta)):
        if not 0.0 <= val <= 1.0:
            issues.append(f"learner.{name}: trace decay must lie in [0, 1]")
    if not 0 < lc.a0 <= 1:
        issues.append("learner.a0: must lie in (0, 1] so constraint estimates stay convex combinations")
    for name, val in (("b0", lc.b0), ("c0", lc.c0)):
        if not val > 0:
            issues.append(f"learner.{name}: must be > 0")
    if not (0.5 < lc.ea < lc.eb < lc.ec <= 1.0):
        issues.append("learner exponents: must satisfy 0.5 < ea < eb < ec <= 1")
    if not lc.theta_max > 0:
        issues.append("learner.theta_max: must be > 0")
    if not lc.gamma_max > 0:
        issues.append("learner.gamma_max: must be > 0")
    for name in ("hidden_policy", "hidden_value"):
        if any(h < 1 for h in getattr(lc, name)):
            issues.append(f"learner.{name}: layer widths must be >= 1")
    for name in ("metric_cadence", "metric_window", "eval_horizon"):
        if getattr(lc, name) < 1:
            issues.append(f"learner.{name}: must be >= 1")
    if lc.checkpoint_cadence < 0:
        issues.append("learner.checkpoint_cadence: must be >= 0")
    return issues


def parse_config(path) -> SystemConfig:
    """Loads and validates a strict-JSON config file."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc}") from exc
    return parse_config_dict(raw)


def config_hash(path) -> str:
    """SHA-256 of the config file bytes; recorded in every run manifest."""
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
