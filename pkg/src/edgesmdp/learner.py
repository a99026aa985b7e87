"""Multi-timescale Lagrangian actor-critic on the event-triggered SMDP.

Per epoch, in order: the TD error of the Lagrangian reward is computed, the
average-reward tracker moves by d(n)*delta, both eligibility traces decay and
absorb fresh gradients, the critic moves on the fast a(n) timescale, the
actor on b(n) with a box projection, the multipliers on the slow c(n)
timescale with projection onto [0, gamma_max], and the constraint estimates
relax toward the observed per-epoch costs.

Departure epochs admit no choice: the forced release adds nothing to the
actor trace (the log-probability gradient of a forced action is zero) but the
critic, average-reward and constraint trackers still update from the epoch.

Two TD conventions are supported.  The default reproduces the per-epoch
update rules verbatim; with smdp_correction=true the sojourn-weighted form is
used instead (delta subtracts R_bar*tau and gamma_p*(g_p - alpha_p*tau), and
the multiplier drift compares Y_p against alpha_p times the tracked mean
sojourn), which makes the enforced constraint the per-unit-time average.
The two coincide exactly when every sojourn equals one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, LearnerConfig, SystemConfig
from .core import (
    OccupancyState,
    Release,
    action_index,
    encode_features,
    feasible_mask,
    feature_dim,
    index_action,
)
from .env import SmdpEnv, Transition, transition_record
from .nets import (
    MLPParams,
    Traces,
    grad_log_from_cache,
    grad_value,
    policy_and_cache,
    sample_action,
    value_and_grad,
    value_estimate,
)

__all__ = [
    "DivergenceError",
    "StepSchedule",
    "LearnerState",
    "EvalReport",
    "MetricLog",
    "step_sizes",
    "init_learner_state",
    "td_error",
    "sa_update",
    "train",
    "evaluate_policy",
    "policy_distribution",
    "save_checkpoint",
    "load_checkpoint",
    "METRIC_HEADER_PREFIX",
]


class DivergenceError(RuntimeError):
    """A non-finite quantity appeared in the learner state."""

    def __init__(self, message: str, state: "LearnerState | None" = None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class StepSchedule:
    """Power-law step sizes a, b, c plus the coupled d = C*a."""

    a0: float
    b0: float
    c0: float
    C: float
    ea: float
    eb: float
    ec: float

    def __post_init__(self):
        if not (0.5 < self.ea < self.eb < self.ec <= 1.0):
            raise ConfigError("step-size exponents must satisfy 0.5 < ea < eb < ec <= 1")
        if min(self.a0, self.b0, self.c0, self.C) <= 0:
            raise ConfigError("step-size scales and C must be > 0")

    @classmethod
    def from_config(cls, lc: LearnerConfig) -> "StepSchedule":
        return cls(a0=lc.a0, b0=lc.b0, c0=lc.c0, C=lc.C, ea=lc.ea, eb=lc.eb, ec=lc.ec)


def step_sizes(n: int, sched: StepSchedule) -> tuple[float, float, float, float]:
    if n < 0:
        raise ValueError("step counter must be >= 0")
    base = 1.0 + n
    a = sched.a0 * base ** -sched.ea
    b = sched.b0 * base ** -sched.eb
    c = sched.c0 * base ** -sched.ec
    return a, b, c, sched.C * a


@dataclass
class LearnerState:
    theta: MLPParams
    w: MLPParams
    traces: Traces
    R_bar: float
    gamma: np.ndarray  # (P,), multipliers in [0, gamma_max]
    Y: np.ndarray      # (P,), per-epoch constraint-cost estimates
    tau_avg: float     # tracked mean sojourn, used by the corrected variant
    n: int


def init_learner_state(cfg: SystemConfig, rng: np.random.Generator) -> LearnerState:
    n_features = feature_dim(cfg)
    theta = MLPParams.init((n_features, *cfg.learner.hidden_policy, cfg.action_count), rng)
    w = MLPParams.init((n_features, *cfg.learner.hidden_value, 1), rng, zero_output=True)
    return LearnerState(
        theta=theta,
        w=w,
        traces=Traces.zeros(w, theta),
        R_bar=0.0,
        gamma=np.zeros(cfg.P),
        Y=np.zeros(cfg.P),
        tau_avg=1.0,
        n=0,
    )


def _delta_from(r: float, g: np.ndarray, tau: float, v_s: float, v_next: float,
                ls: LearnerState, cfg: SystemConfig) -> float:
    alpha = np.asarray(cfg.alpha)
    if cfg.learner.smdp_correction:
        penalty = float(ls.gamma @ (g - alpha * tau))
        return r - penalty - ls.R_bar * tau + v_next - v_s
    return r - float(ls.gamma @ (g - alpha)) - ls.R_bar + v_next - v_s


def td_error(t: Transition, ls: LearnerState, cfg: SystemConfig) -> float:
    v_s = value_estimate(ls.w, encode_features(t.s, cfg))
    v_next = value_estimate(ls.w, encode_features(t.s_next, cfg))
    return _delta_from(t.r, t.g, t.tau, v_s, v_next, ls, cfg)


def sa_update(ls: LearnerState, t: Transition, delta: float, sched: StepSchedule,
              cfg: SystemConfig, *, grad_v: np.ndarray | None = None,
              grad_logpi: np.ndarray | None = None) -> LearnerState:
    """One in-place pass of the coupled recursions; returns ls for chaining.

    grad_v / grad_logpi may be passed by the driver to reuse forward caches;
    when absent they are recomputed from the transition.  grad_logpi stays
    None on release epochs, leaving the actor trace to pure decay.
    """
    lc = cfg.learner
    a_n, b_n, c_n, d_n = step_sizes(ls.n, sched)

    ls.R_bar += d_n * delta

    if grad_v is None:
        grad_v = grad_value(ls.w, encode_features(t.s, cfg))
    ls.traces.z_w *= lc.lam_w
    ls.traces.z_w += grad_v

    ls.traces.z_theta *= lc.lam_theta
    if grad_logpi is None and t.s.event.is_arrival:
        feats = encode_features(t.s, cfg)
        mask = feasible_mask(t.s, cfg)
        out, acts = policy_and_cache(ls.theta, feats, mask)
        grad_logpi = grad_log_from_cache(ls.theta, acts, out, action_index(t.a, cfg))
    if grad_logpi is not None:
        ls.traces.z_theta += grad_logpi

    ls.w.flat += (a_n * delta) * ls.traces.z_w
    ls.theta.flat += (b_n * delta) * ls.traces.z_theta
    np.clip(ls.theta.flat, -lc.theta_max, lc.theta_max, out=ls.theta.flat)

    alpha = np.asarray(cfg.alpha)
    drift = ls.Y - alpha * ls.tau_avg if lc.smdp_correction else ls.Y - alpha
    ls.gamma = np.clip(ls.gamma + c_n * drift, 0.0, lc.gamma_max)

    ls.Y += a_n * (t.g - ls.Y)
    ls.tau_avg += a_n * (t.tau - ls.tau_avg)
    ls.n += 1
    return ls


@dataclass
class MetricLog:
    header: list[str]
    rows: list[list[float]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        k = self.header.index(name)
        return np.array([row[k] for row in self.rows])

    def write(self, path) -> None:
        lines = [",".join(self.header)]
        for row in self.rows:
            lines.append(",".join(_fmt(v) for v in row))
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def metric_header(P: int) -> list[str]:
    return (
        ["n", "R_bar", "J_window"]
        + [f"gamma_{p}" for p in range(1, P + 1)]
        + [f"Y_{p}" for p in range(1, P + 1)]
        + [f"G_window_{p}" for p in range(1, P + 1)]
        + ["delta_rms"]
    )


METRIC_HEADER_PREFIX = ["n", "R_bar", "J_window"]


def train(cfg: SystemConfig, seed: int | None = None, n_steps: int = 0, *,
          metrics_path=None, trace_path=None, checkpoint_dir=None,
          step_callback=None) -> tuple[LearnerState, MetricLog]:
    """Runs the online loop for n_steps epochs; deterministic given the seed.

    Windowed estimates in the metric log are ratio averages over the trailing
    metric_window epochs.  Raises DivergenceError (carrying the last state)
    if any tracked quantity leaves the finite range.
    """
    lc = cfg.learner
    if seed is None:
        seed = lc.seed
    init_seq, env_seq = np.random.SeedSequence(seed).spawn(2)
    ls = init_learner_state(cfg, np.random.Generator(np.random.PCG64(init_seq)))
    env = SmdpEnv(cfg, env_seq)
    sched = StepSchedule.from_config(lc)
    action_table = [index_action(k, cfg) for k in range(cfg.action_count)]
    release = Release()
    alpha = np.asarray(cfg.alpha)
    correction = lc.smdp_correction

    log = MetricLog(header=metric_header(cfg.P))
    trace_fh = open(trace_path, "w") if trace_path is not None else None
    # Cumulative sums snapshotted at every metric row; windowed ratios are
    # differences of snapshots roughly metric_window epochs apart.
    cum_r = 0.0
    cum_tau = 0.0
    cum_g = np.zeros(cfg.P)
    cum_d2 = 0.0
    snaps = [(0, 0.0, 0.0, cum_g.copy(), 0.0)]

    s = env.reset()
    feats = encode_features(s, cfg)
    try:
        for epoch in range(1, n_steps + 1):
            if s.event.is_arrival:
                mask = feasible_mask(s, cfg)
                out, acts = policy_and_cache(ls.theta, feats, mask)
                k = sample_action(out, env.rng)
                t = env.step(s, action_table[k])
                grad_logpi = grad_log_from_cache(ls.theta, acts, out, k)
            else:
                t = env.step(s, release)
                grad_logpi = None
            feats_next = encode_features(t.s_next, cfg)
            v_s, grad_v = value_and_grad(ls.w, feats)
            v_next = value_estimate(ls.w, feats_next)
            delta = _delta_from(t.r, t.g, t.tau, v_s, v_next, ls, cfg)
            if not np.isfinite(delta):
                raise DivergenceError(f"non-finite TD error at epoch {epoch}", ls)
            sa_update(ls, t, delta, sched, cfg, grad_v=grad_v, grad_logpi=grad_logpi)

            cum_r += t.r
            cum_tau += t.tau
            cum_g += t.g
            cum_d2 += delta * delta
            if trace_fh is not None:
                idx = -1 if grad_logpi is None else k
                trace_fh.write(transition_record(epoch, t, idx) + "\n")
            if step_callback is not None:
                step_callback(ls, t, delta)

            if epoch % lc.metric_cadence == 0 or epoch == n_steps:
                if not (np.isfinite(ls.theta.flat).all() and np.isfinite(ls.w.flat).all()
                        and np.isfinite(ls.R_bar)):
                    raise DivergenceError(f"non-finite parameters at epoch {epoch}", ls)
                base = snaps[0]
                for snap in reversed(snaps):
                    if snap[0] <= epoch - lc.metric_window:
                        base = snap
                        break
                d_tau = cum_tau - base[2]
                d_n = epoch - base[0]
                j_win = (cum_r - base[1]) / d_tau if d_tau > 0 else 0.0
                g_win = (cum_g - base[3]) / d_tau if d_tau > 0 else np.zeros(cfg.P)
                d_rms = np.sqrt((cum_d2 - base[4]) / d_n) if d_n > 0 else 0.0
                log.rows.append(
                    [epoch, ls.R_bar, j_win]
                    + [float(v) for v in ls.gamma]
                    + [float(v) for v in ls.Y]
                    + [float(v) for v in g_win]
                    + [d_rms]
                )
                snaps.append((epoch, cum_r, cum_tau, cum_g.copy(), cum_d2))
                if (checkpoint_dir is not None and lc.checkpoint_cadence > 0
                        and epoch % lc.checkpoint_cadence == 0):
                    save_checkpoint(ls, f"{checkpoint_dir}/checkpoint_{epoch}.json")
            s = t.s_next
            feats = feats_next
    finally:
        if trace_fh is not None:
            trace_fh.close()

    if metrics_path is not None:
        log.write(metrics_path)
    return ls, log


@dataclass
class EvalReport:
    """Time-average reward and constraint values with batch-means half-widths."""

    J_hat: float
    G_hat: np.ndarray
    horizon: int
    J_half_width: float
    G_half_width: np.ndarray

    def as_dict(self) -> dict:
        return {
            "J_hat": self.J_hat,
            "G_hat": [float(v) for v in self.G_hat],
            "horizon": self.horizon,
            "J_half_width": self.J_half_width,
            "G_half_width": [float(v) for v in self.G_half_width],
        }


def evaluate_policy(theta: MLPParams, cfg: SystemConfig, seed: int,
                    horizon: int, n_batches: int = 20) -> EvalReport:
    """Frozen-policy rollout; ratio estimators with batch-means confidence.

    Half-widths are 1.96 * sd / sqrt(n_batches) over per-batch ratio
    estimates, so disjoint-seed evaluations of one policy should agree within
    the summed half-widths about 19 times in 20.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    env = SmdpEnv(cfg, seed)
    action_table = [index_action(k, cfg) for k in range(cfg.action_count)]
    release = Release()
    sum_r = np.zeros(n_batches)
    sum_tau = np.zeros(n_batches)
    sum_g = np.zeros((n_batches, cfg.P))
    s = env.reset()
    for epoch in range(horizon):
        if s.event.is_arrival:
            feats = encode_features(s, cfg)
            mask = feasible_mask(s, cfg)
            out, _ = policy_and_cache(theta, feats, mask)
            a = action_table[sample_action(out, env.rng)]
        else:
            a = release
        t = env.step(s, a)
        batch = epoch * n_batches // horizon
        sum_r[batch] += t.r
        sum_tau[batch] += t.tau
        sum_g[batch] += t.g
        s = t.s_next
    total_tau = sum_tau.sum()
    j_batches = sum_r / sum_tau
    g_batches = sum_g / sum_tau[:, None]
    scale = 1.96 / np.sqrt(n_batches)
    return EvalReport(
        J_hat=float(sum_r.sum() / total_tau),
        G_hat=sum_g.sum(axis=0) / total_tau,
        horizon=horizon,
        J_half_width=float(np.std(j_batches, ddof=1) * scale),
        G_half_width=np.std(g_batches, axis=0, ddof=1) * scale,
    )


def policy_distribution(theta: MLPParams, s: OccupancyState, cfg: SystemConfig):
    """Action distribution of the parameterized policy in one arrival state."""
    out, _ = policy_and_cache(theta, encode_features(s, cfg), feasible_mask(s, cfg))
    return out


def save_checkpoint(ls: LearnerState, path, config_hash: str | None = None) -> None:
    payload = {
        "version": 1,
        "config_hash": config_hash,
        "theta_dims": list(ls.theta.dims),
        "w_dims": list(ls.w.dims),
        "theta": ls.theta.flat.tolist(),
        "w": ls.w.flat.tolist(),
        "z_theta": ls.traces.z_theta.tolist(),
        "z_w": ls.traces.z_w.tolist(),
        "R_bar": ls.R_bar,
        "gamma": ls.gamma.tolist(),
        "Y": ls.Y.tolist(),
        "tau_avg": ls.tau_avg,
        "n": ls.n,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> LearnerState:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    theta = MLPParams(dims=tuple(payload["theta_dims"]),
                      flat=np.array(payload["theta"], dtype=np.float64))
    w = MLPParams(dims=tuple(payload["w_dims"]),
                  flat=np.array(payload["w"], dtype=np.float64))
    traces = Traces(z_w=np.array(payload["z_w"]), z_theta=np.array(payload["z_theta"]))
    return LearnerState(
        theta=theta, w=w, traces=traces,
        R_bar=float(payload["R_bar"]),
        gamma=np.array(payload["gamma"], dtype=np.float64),
        Y=np.array(payload["Y"], dtype=np.float64),
        tau_avg=float(payload["tau_avg"]),
        n=int(payload["n"]),
    )
