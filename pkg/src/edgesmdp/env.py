"""Generative discrete-event environment: competing exponential clocks.

Holding-time model: arrivals are Poisson per priority; service completions
are exponential with per-service rate mu_edge[p]*j on the edge (rate grows
with the granted VMs) and mu_cloud[p]*m in the cloud.  Both tables can be
overridden per class through cfg.rate_overrides.  Under this model the
occupancy plus triggering event is Markov, the sojourn between epochs is
Exponential(total rate), and the next event is drawn proportionally to its
rate, independently of the sojourn.

Randomness comes from one numpy Generator backed by the PCG64 bit stream;
a fixed seed reproduces the exact event sequence bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .core import (
    Action,
    Arrival,
    CloudDeparture,
    EdgeDeparture,
    Event,
    Occupancy,
    OccupancyState,
    apply_action,
    constraint_cost,
    empty_occupancy,
    stage_reward,
)

__all__ = [
    "Transition",
    "RngStream",
    "make_rng",
    "completion_rates",
    "event_rates",
    "sample_next_event",
    "step",
    "reset",
    "SmdpEnv",
    "transition_record",
]

RngStream = np.random.Generator


def make_rng(seed: int) -> RngStream:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class Transition:
    """One decision epoch: state, action, sojourn, reward, constraint costs, next state."""

    s: OccupancyState
    a: Action
    tau: float
    r: float
    g: np.ndarray  # (P,)
    s_next: OccupancyState


def completion_rates(cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-service completion-rate tables (edge: (P,b,m), cloud: (P,b))."""
    j_w = np.arange(1, cfg.m + 1, dtype=np.float64)
    edge = np.asarray(cfg.mu_edge, dtype=np.float64)[:, None, None] * j_w[None, None, :]
    edge = np.broadcast_to(edge, (cfg.P, cfg.b, cfg.m)).copy()
    cloud = np.full((cfg.P, cfg.b), 0.0)
    cloud[:, :] = np.asarray(cfg.mu_cloud, dtype=np.float64)[:, None] * cfg.m
    for ov in cfg.rate_overrides:
        if ov.location == "edge":
            edge[ov.p - 1, ov.i - 1, ov.j - 1] = ov.rate
        else:
            cloud[ov.p - 1, ov.i - 1] = ov.rate
    return edge, cloud


class _Tables:
    """Precomputed flat rate layout: arrivals, edge slots, cloud slots."""

    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg
        self.lam = np.asarray(cfg.lam, dtype=np.float64)
        self.edge_rate, self.cloud_rate = completion_rates(cfg)
        events: list[Event] = [Arrival(p) for p in range(1, cfg.P + 1)]
        for p in range(1, cfg.P + 1):
            for i in range(1, cfg.b + 1):
                for j in range(1, cfg.m + 1):
                    events.append(EdgeDeparture(i, j, p))
        for p in range(1, cfg.P + 1):
            for i in range(1, cfg.b + 1):
                events.append(CloudDeparture(i, p))
        self.events = events

    def rate_vector(self, occ: Occupancy) -> np.ndarray:
        return np.concatenate([
            self.lam,
            (occ.x * self.edge_rate).reshape(-1),
            (occ.y * self.cloud_rate).reshape(-1),
        ])


def event_rates(occ: Occupancy, cfg: SystemConfig) -> dict[Event, float]:
    """Exponential clock rate of every event that can fire from occ."""
    tables = _Tables(cfg)
    rates = tables.rate_vector(occ)
    return {tables.events[k]: float(rates[k]) for k in np.flatnonzero(rates)}


def sample_next_event(occ: Occupancy, rng: RngStream, cfg: SystemConfig,
                      _tables: _Tables | None = None) -> tuple[float, Event]:
    """Draws (sojourn, next event) from the competing clocks of occ."""
    tables = _tables if _tables is not None else _Tables(cfg)
    rates = tables.rate_vector(occ)
    total = rates.sum()
    tau = rng.exponential(1.0 / total)
    k = int(np.searchsorted(np.cumsum(rates), rng.random() * total, side="right"))
    k = min(k, len(rates) - 1)  # guard against roundoff at the top edge
    return tau, tables.events[k]


def step(s: OccupancyState, a: Action, rng: RngStream, cfg: SystemConfig,
         _tables: _Tables | None = None) -> Transition:
    """Applies a, samples the next epoch, and assembles the full record."""
    post = apply_action(s, a, cfg)
    tau, event = sample_next_event(post, rng, cfg, _tables)
    r = stage_reward(post, a, tau, cfg)
    g = constraint_cost(post, tau, cfg)
    return Transition(s=s, a=a, tau=tau, r=r, g=g, s_next=OccupancyState(post, event))


def reset(cfg: SystemConfig, rng: RngStream) -> OccupancyState:
    """Empty system; the first epoch is necessarily an arrival."""
    occ = empty_occupancy(cfg)
    _, event = sample_next_event(occ, rng, cfg)
    return OccupancyState(occ, event)


class SmdpEnv:
    """Stateful wrapper owning one rng stream and the precomputed rate tables.

    Instances are single-threaded; run several with distinct seeds for
    parallel rollouts.
    """

    def __init__(self, cfg: SystemConfig, seed: int):
        self.cfg = cfg
        self.rng = make_rng(seed)
        self.tables = _Tables(cfg)

    def reset(self) -> OccupancyState:
        occ = empty_occupancy(self.cfg)
        _, event = sample_next_event(occ, self.rng, self.cfg, self.tables)
        return OccupancyState(occ, event)

    def step(self, s: OccupancyState, a: Action) -> Transition:
        return step(s, a, self.rng, self.cfg, self.tables)


def transition_record(n: int, tr: Transition, action_idx: int) -> str:
    """One JSONL trace line; release epochs are logged with action index -1."""
    occ = tr.s_next.occ
    digest = hashlib.sha1(occ.x.tobytes() + occ.y.tobytes()).hexdigest()[:12]
    return json.dumps({
        "n": n,
        "event": tr.s.event.tag(),
        "action_index": action_idx,
        "tau": tr.tau,
        "r": tr.r,
        "g": [float(v) for v in tr.g],
        "occupancy_hash": digest,
    })
