"""Pure model layer: states, events, actions, feasibility, rewards, costs, features.

Occupancy counts live in two integer arrays:

    x[p-1, i-1, j-1]   edge services of priority p holding i subchannels, j VMs
    y[p-1, i-1]        cloud services of priority p holding i subchannels

Capacity feasibility: total subchannels held (edge + cloud) may not exceed B,
and total edge VMs held may not exceed M.  Cloud services are billed m VMs
each since the cloud side always grants the full per-service VM cap.

Everything here is a deterministic function of its inputs; there is no
randomness and no learning in this module.

Canonical flat orderings (used identically by features, the action-index map
and the oracle's state enumeration):

    x slots: priority outer, subchannels middle, VMs inner, all ascending
    y slots: priority outer, subchannels inner, ascending
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig

__all__ = [
    "ARRIVAL", "EDGE_DEPARTURE", "CLOUD_DEPARTURE",
    "REJECT", "RELEASE", "EDGE_ACCEPT", "CLOUD_ACCEPT",
    "Event", "Action", "Occupancy", "OccupancyState", "StageOutcome",
    "Arrival", "EdgeDeparture", "CloudDeparture",
    "Reject", "Release", "EdgeAccept", "CloudAccept",
    "ModelViolationError", "FeasibilityError",
    "empty_occupancy", "used_capacity", "validate_state",
    "feasible_actions", "feasible_mask", "apply_action",
    "lump_reward", "holding_cost_rate", "stage_reward",
    "queue_weight", "constraint_cost",
    "encode_features", "feature_dim",
    "action_index", "index_action", "event_slot",
]


class ModelViolationError(ValueError):
    """A state breaks a structural invariant (negative count, bad event, ...)."""


class FeasibilityError(ValueError):
    """An action is not feasible in the state it was applied to."""


ARRIVAL = 0
EDGE_DEPARTURE = 1
CLOUD_DEPARTURE = 2

REJECT = 0
EDGE_ACCEPT = 1
CLOUD_ACCEPT = 2
RELEASE = 3


@dataclass(frozen=True, slots=True)
class Event:
    """Triggering event of a decision epoch.

    kind is one of ARRIVAL / EDGE_DEPARTURE / CLOUD_DEPARTURE; p is the
    priority class (1-based); i, j are the subchannel and VM counts of the
    departing service (0 where not applicable).
    """

    kind: int
    p: int
    i: int = 0
    j: int = 0

    @property
    def is_arrival(self) -> bool:
        return self.kind == ARRIVAL

    def tag(self) -> str:
        if self.kind == ARRIVAL:
            return f"A({self.p})"
        if self.kind == EDGE_DEPARTURE:
            return f"D({self.i},{self.j},{self.p})"
        return f"F({self.i},{self.p})"


def Arrival(p: int) -> Event:
    return Event(ARRIVAL, p)


def EdgeDeparture(i: int, j: int, p: int) -> Event:
    return Event(EDGE_DEPARTURE, p, i, j)


def CloudDeparture(i: int, p: int) -> Event:
    return Event(CLOUD_DEPARTURE, p, i)


@dataclass(frozen=True, slots=True)
class Action:
    """Decision taken at an epoch.

    kind is REJECT / EDGE_ACCEPT / CLOUD_ACCEPT / RELEASE; i, j are the
    granted subchannel / VM counts for accepts (0 otherwise).  Accept actions
    carry no priority: the arriving class is read off the state's event.
    """

    kind: int
    i: int = 0
    j: int = 0

    def tag(self) -> str:
        if self.kind == REJECT:
            return "reject"
        if self.kind == RELEASE:
            return "release"
        if self.kind == EDGE_ACCEPT:
            return f"edge({self.i},{self.j})"
        return f"cloud({self.i})"


def Reject() -> Action:
    return Action(REJECT)


def Release() -> Action:
    return Action(RELEASE)


def EdgeAccept(i: int, j: int) -> Action:
    return Action(EDGE_ACCEPT, i, j)


def CloudAccept(i: int) -> Action:
    return Action(CLOUD_ACCEPT, i)


@dataclass(frozen=True)
class Occupancy:
    """Post-decision occupancy; arrays are treated as immutable."""

    x: np.ndarray  # (P, b, m) int64
    y: np.ndarray  # (P, b) int64

    def key(self) -> bytes:
        return self.x.tobytes() + self.y.tobytes()

    def copy(self) -> "Occupancy":
        return Occupancy(self.x.copy(), self.y.copy())


@dataclass(frozen=True)
class OccupancyState:
    """Occupancy plus the event that triggered the current epoch."""

    occ: Occupancy
    event: Event

    @property
    def x(self) -> np.ndarray:
        return self.occ.x

    @property
    def y(self) -> np.ndarray:
        return self.occ.y


@dataclass(frozen=True)
class StageOutcome:
    """One epoch's elapsed time, stage reward and per-priority constraint cost."""

    tau: float
    r: float
    g: np.ndarray  # (P,)


def empty_occupancy(cfg: SystemConfig) -> Occupancy:
    return Occupancy(
        np.zeros((cfg.P, cfg.b, cfg.m), dtype=np.int64),
        np.zeros((cfg.P, cfg.b), dtype=np.int64),
    )


def _subchannel_weights(cfg: SystemConfig) -> np.ndarray:
    return np.arange(1, cfg.b + 1, dtype=np.int64)


def used_capacity(occ: Occupancy, cfg: SystemConfig) -> tuple[int, int]:
    """Returns (subchannels in use, edge VMs in use)."""
    i_w = _subchannel_weights(cfg)
    j_w = np.arange(1, cfg.m + 1, dtype=np.int64)
    used_b = int((occ.x.sum(axis=(0, 2)) * i_w).sum() + (occ.y.sum(axis=0) * i_w).sum())
    used_m = int((occ.x.sum(axis=(0, 1)) * j_w).sum())
    return used_b, used_m


def validate_state(s: OccupancyState, cfg: SystemConfig) -> None:
    """Checks counts, capacities and event consistency; raises on violation."""
    if s.x.shape != (cfg.P, cfg.b, cfg.m) or s.y.shape != (cfg.P, cfg.b):
        raise ModelViolationError("occupancy arrays have the wrong shape")
    if (s.x < 0).any() or (s.y < 0).any():
        raise ModelViolationError("negative occupancy count")
    used_b, used_m = used_capacity(s.occ, cfg)
    if used_b > cfg.B:
        raise ModelViolationError(f"subchannel capacity exceeded: {used_b} > {cfg.B}")
    if used_m > cfg.M:
        raise ModelViolationError(f"VM capacity exceeded: {used_m} > {cfg.M}")
    e = s.event
    if not 1 <= e.p <= cfg.P:
        raise ModelViolationError(f"event priority {e.p} out of range")
    if e.kind == EDGE_DEPARTURE:
        if not (1 <= e.i <= cfg.b and 1 <= e.j <= cfg.m):
            raise ModelViolationError("edge departure indices out of range")
        if s.x[e.p - 1, e.i - 1, e.j - 1] <= 0:
            raise ModelViolationError(f"departure event {e.tag()} has zero count")
    elif e.kind == CLOUD_DEPARTURE:
        if not 1 <= e.i <= cfg.b:
            raise ModelViolationError("cloud departure index out of range")
        if s.y[e.p - 1, e.i - 1] <= 0:
            raise ModelViolationError(f"departure event {e.tag()} has zero count")
    elif e.kind != ARRIVAL:
        raise ModelViolationError(f"unknown event kind {e.kind}")


def feasible_mask(s: OccupancyState, cfg: SystemConfig) -> np.ndarray:
    """Boolean feasibility over the decision-action index set for an arrival.

    Reject (index 0) is always feasible; an accept is feasible iff the
    post-decision occupancy still fits both capacities.
    """
    if not s.event.is_arrival:
        raise ModelViolationError("feasible_mask is defined for arrival events only")
    used_b, used_m = used_capacity(s.occ, cfg)
    mask = np.zeros(cfg.action_count, dtype=bool)
    mask[0] = True
    free_b = cfg.B - used_b
    free_m = cfg.M - used_m
    for i in range(1, cfg.b + 1):
        if i > free_b:
            break
        for j in range(1, cfg.m + 1):
            if j <= free_m:
                mask[1 + (i - 1) * cfg.m + (j - 1)] = True
        mask[cfg.b * cfg.m + i] = True
    return mask


def feasible_actions(s: OccupancyState, cfg: SystemConfig) -> list[Action]:
    """All actions available in state s, ordered by the action-index map.

    Departure epochs admit no choice: the held resources must be released.
    """
    validate_state(s, cfg)
    if not s.event.is_arrival:
        return [Release()]
    mask = feasible_mask(s, cfg)
    return [index_action(k, cfg) for k in np.flatnonzero(mask)]


def apply_action(s: OccupancyState, a: Action, cfg: SystemConfig) -> Occupancy:
    """Post-decision occupancy after taking a in s (the epoch's event is consumed)."""
    e = s.event
    if a.kind == RELEASE:
        if e.is_arrival:
            raise FeasibilityError("release is only valid for departure events")
        occ = s.occ.copy()
        if e.kind == EDGE_DEPARTURE:
            occ.x[e.p - 1, e.i - 1, e.j - 1] -= 1
            if occ.x[e.p - 1, e.i - 1, e.j - 1] < 0:
                raise ModelViolationError("release of an absent edge service")
        else:
            occ.y[e.p - 1, e.i - 1] -= 1
            if occ.y[e.p - 1, e.i - 1] < 0:
                raise ModelViolationError("release of an absent cloud service")
        return occ
    if not e.is_arrival:
        raise FeasibilityError("departure events only admit release")
    if a.kind == REJECT:
        return s.occ
    used_b, used_m = used_capacity(s.occ, cfg)
    if a.kind == EDGE_ACCEPT:
        if not (1 <= a.i <= cfg.b and 1 <= a.j <= cfg.m):
            raise FeasibilityError(f"edge accept ({a.i},{a.j}) outside per-service caps")
        if used_b + a.i > cfg.B or used_m + a.j > cfg.M:
            raise FeasibilityError(f"edge accept ({a.i},{a.j}) exceeds capacity")
        occ = s.occ.copy()
        occ.x[e.p - 1, a.i - 1, a.j - 1] += 1
        return occ
    if a.kind == CLOUD_ACCEPT:
        if not 1 <= a.i <= cfg.b:
            raise FeasibilityError(f"cloud accept ({a.i}) outside per-service cap")
        if used_b + a.i > cfg.B:
            raise FeasibilityError(f"cloud accept ({a.i}) exceeds subchannel capacity")
        occ = s.occ.copy()
        occ.y[e.p - 1, a.i - 1] += 1
        return occ
    raise FeasibilityError(f"unknown action kind {a.kind}")


def lump_reward(a: Action, cfg: SystemConfig) -> float:
    """Instantaneous revenue of the decision itself."""
    if a.kind == CLOUD_ACCEPT:
        return cfg.k_c
    if a.kind == EDGE_ACCEPT:
        return cfg.k_e
    if a.kind == REJECT:
        return -cfg.k_r
    return 0.0


def holding_cost_rate(occ: Occupancy, cfg: SystemConfig) -> float:
    """Per-unit-time VM operating cost of the post-decision occupancy.

    Edge services are billed the VMs they actually hold; cloud services are
    billed the full per-service cap of m VMs.  The default pairing charges
    c_e for edge VMs and c_c for cloud VMs; cost_pairing="as-printed" swaps
    the two coefficients.
    """
    j_w = np.arange(1, cfg.m + 1, dtype=np.int64)
    edge_vms = float((occ.x.sum(axis=(0, 1)) * j_w).sum())
    cloud_vms = float(cfg.m * occ.y.sum())
    if cfg.cost_pairing == "as-printed":
        return cfg.c_c * edge_vms + cfg.c_e * cloud_vms
    return cfg.c_e * edge_vms + cfg.c_c * cloud_vms


def stage_reward(occ: Occupancy, a: Action, tau: float, cfg: SystemConfig) -> float:
    """Lump reward minus holding cost accrued over the sojourn tau."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return lump_reward(a, cfg) - holding_cost_rate(occ, cfg) * tau


def queue_weight(occ: Occupancy, cfg: SystemConfig) -> np.ndarray:
    """Weighted queue length per priority on the post-decision occupancy."""
    w_e = np.asarray(cfg.w_edge, dtype=np.float64)  # (b, m)
    w_c = np.asarray(cfg.w_cloud, dtype=np.float64)  # (b,)
    return (occ.x * w_e[None, :, :]).sum(axis=(1, 2)) + (occ.y * w_c[None, :]).sum(axis=1)


def constraint_cost(occ: Occupancy, tau: float, cfg: SystemConfig) -> np.ndarray:
    """Per-priority weighted queue length integrated over the sojourn."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return queue_weight(occ, cfg) * tau


# --- feature encoding -------------------------------------------------------

def feature_dim(cfg: SystemConfig) -> int:
    n_x = cfg.P * cfg.b * cfg.m
    n_y = cfg.P * cfg.b
    return n_x + n_y + cfg.P + n_x + n_y


def event_slot(e: Event, cfg: SystemConfig) -> int:
    """Position of an event in the one-hot block (arrivals, then edge and
    cloud departures in canonical slot order)."""
    if e.kind == ARRIVAL:
        return e.p - 1
    if e.kind == EDGE_DEPARTURE:
        return cfg.P + ((e.p - 1) * cfg.b + (e.i - 1)) * cfg.m + (e.j - 1)
    return cfg.P + cfg.P * cfg.b * cfg.m + (e.p - 1) * cfg.b + (e.i - 1)


def encode_features(s: OccupancyState, cfg: SystemConfig) -> np.ndarray:
    """Fixed-length network input: x counts / M, y counts / B, event one-hot.

    The normalizers keep every entry in [0, 1]: an edge class count can never
    exceed M (each service holds at least one VM) and a cloud class count can
    never exceed B (each holds at least one subchannel).
    """
    n_x = cfg.P * cfg.b * cfg.m
    n_y = cfg.P * cfg.b
    out = np.zeros(feature_dim(cfg), dtype=np.float64)
    out[:n_x] = s.x.reshape(-1) / cfg.M
    out[n_x:n_x + n_y] = s.y.reshape(-1) / cfg.B
    out[n_x + n_y + event_slot(s.event, cfg)] = 1.0
    return out


# --- action indexing --------------------------------------------------------

def action_index(a: Action, cfg: SystemConfig) -> int:
    """Bijection from decision actions onto [0 .. b*m + b].

    Reject is 0; edge accepts occupy 1..b*m in (subchannels outer, VMs inner)
    order; cloud accepts follow.  Release is not a decision and cannot be
    indexed.
    """
    if a.kind == REJECT:
        return 0
    if a.kind == EDGE_ACCEPT:
        if not (1 <= a.i <= cfg.b and 1 <= a.j <= cfg.m):
            raise ValueError(f"edge accept ({a.i},{a.j}) outside caps")
        return 1 + (a.i - 1) * cfg.m + (a.j - 1)
    if a.kind == CLOUD_ACCEPT:
        if not 1 <= a.i <= cfg.b:
            raise ValueError(f"cloud accept ({a.i}) outside caps")
        return cfg.b * cfg.m + a.i
    raise ValueError("release has no action index")


def index_action(k: int, cfg: SystemConfig) -> Action:
    n_edge = cfg.b * cfg.m
    if k == 0:
        return Reject()
    if 1 <= k <= n_edge:
        i, j = divmod(k - 1, cfg.m)
        return EdgeAccept(i + 1, j + 1)
    if n_edge < k <= n_edge + cfg.b:
        return CloudAccept(k - n_edge)
    raise ValueError(f"action index {k} out of range [0, {n_edge + cfg.b}]")
