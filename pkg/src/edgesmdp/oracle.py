"""Exact ground truth on small instances.

Builds the explicit decision-epoch model by exhaustive enumeration: every
occupancy satisfying the two capacity constraints, crossed with every event
that can fire from it.  Under exponential clocks the expected sojourn out of
a post-decision occupancy is 1/(total rate) and the next-event distribution
is rate/(total rate), which turns the simulator's generative kernel into
closed-form rows.  Expected stage quantities follow from linearity of the
reward and constraint costs in the sojourn.

On top of the explicit model: stationary policy evaluation (time-average
ratios over the epoch chain), the occupation-measure LP for the constrained
optimum (solved with the in-package dense simplex), relative value iteration
with an aperiodicity damping, and Bellman / Poisson residual checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .config import SystemConfig
from .core import (
    Action,
    Arrival,
    CloudDeparture,
    EdgeDeparture,
    Occupancy,
    OccupancyState,
    apply_action,
    empty_occupancy,
    feasible_actions,
    holding_cost_rate,
    lump_reward,
    queue_weight,
)
from .env import _Tables
from .simplex import SimplexError, solve_lp

__all__ = [
    "TooLargeError",
    "MultiChainError",
    "SolverFailureError",
    "ExplicitModel",
    "StationarySolution",
    "LPSolution",
    "enumerate_states",
    "build_model",
    "policy_evaluation",
    "uniform_policy",
    "deterministic_policies",
    "solve_constrained_lp",
    "relative_value_iteration",
    "solve_poisson",
    "bellman_residual",
    "dump_model",
]

STATE_GUARD = 100_000


class TooLargeError(RuntimeError):
    """The instance exceeds the exhaustive-enumeration guard."""


class MultiChainError(RuntimeError):
    """The policy-induced chain has more than one recurrent class."""


class SolverFailureError(RuntimeError):
    """The LP could not be solved even after rhs perturbation."""


def _enumerate_occupancies(cfg: SystemConfig, guard: int):
    """All occupancies satisfying the capacity constraints, in ascending
    canonical-flat lexicographic order."""
    x_slots = [(p, i, j) for p in range(cfg.P) for i in range(1, cfg.b + 1)
               for j in range(1, cfg.m + 1)]
    y_slots = [(p, i) for p in range(cfg.P) for i in range(1, cfg.b + 1)]
    n_x = len(x_slots)
    sub_used = [i for (_, i, _) in x_slots] + [i for (_, i) in y_slots]
    vm_used = [j for (_, _, j) in x_slots] + [0] * len(y_slots)
    counts = np.zeros(n_x + len(y_slots), dtype=np.int64)
    out: list[Occupancy] = []

    def emit():
        x = np.zeros((cfg.P, cfg.b, cfg.m), dtype=np.int64)
        y = np.zeros((cfg.P, cfg.b), dtype=np.int64)
        for k, (p, i, j) in enumerate(x_slots):
            x[p, i - 1, j - 1] = counts[k]
        for k, (p, i) in enumerate(y_slots):
            y[p, i - 1] = counts[n_x + k]
        out.append(Occupancy(x, y))

    def rec(slot: int, free_b: int, free_m: int):
        if slot == counts.size:
            if len(out) >= guard:
                raise TooLargeError(
                    f"state enumeration exceeds the guard of {guard} states")
            emit()
            return
        cap = free_b // sub_used[slot]
        if vm_used[slot]:
            cap = min(cap, free_m // vm_used[slot])
        for count in range(cap + 1):
            counts[slot] = count
            rec(slot + 1, free_b - count * sub_used[slot],
                free_m - count * vm_used[slot])
        counts[slot] = 0

    rec(0, cfg.B, cfg.M)
    return out


def _valid_events(occ: Occupancy, cfg: SystemConfig):
    """Arrivals always; departures only for positive counts; canonical order."""
    events = [Arrival(p) for p in range(1, cfg.P + 1)]
    for p in range(1, cfg.P + 1):
        for i in range(1, cfg.b + 1):
            for j in range(1, cfg.m + 1):
                if occ.x[p - 1, i - 1, j - 1] > 0:
                    events.append(EdgeDeparture(i, j, p))
    for p in range(1, cfg.P + 1):
        for i in range(1, cfg.b + 1):
            if occ.y[p - 1, i - 1] > 0:
                events.append(CloudDeparture(i, p))
    return events


def enumerate_states(cfg: SystemConfig, guard: int = STATE_GUARD) -> list[OccupancyState]:
    """Every reachable (occupancy, event) pair in canonical order.

    Refuses with TooLargeError when the count would exceed the guard.
    """
    states: list[OccupancyState] = []
    for occ in _enumerate_occupancies(cfg, guard):
        for event in _valid_events(occ, cfg):
            if len(states) >= guard:
                raise TooLargeError(
                    f"state enumeration exceeds the guard of {guard} states")
            states.append(OccupancyState(occ, event))
    return states


@dataclass
class ExplicitModel:
    """Dense explicit form of the decision-epoch process.

    Per state s and local action index a: next_idx[s][a] / probs[s][a] hold
    the sparse next-state row, tau_bar[s][a] the expected sojourn, r_bar[s][a]
    the expected stage reward and g_bar[s][a] the (P,) expected constraint
    cost.
    """

    cfg: SystemConfig
    states: list[OccupancyState]
    index: dict
    actions: list[list[Action]]
    next_idx: list[list[np.ndarray]]
    probs: list[list[np.ndarray]]
    tau_bar: list[np.ndarray]
    r_bar: list[np.ndarray]
    g_bar: list[np.ndarray]

    @property
    def n_states(self) -> int:
        return len(self.states)

    def state_id(self, s: OccupancyState) -> int:
        return self.index[(s.occ.key(), s.event)]


def build_model(cfg: SystemConfig, guard: int = STATE_GUARD) -> ExplicitModel:
    states = enumerate_states(cfg, guard)
    index = {(s.occ.key(), s.event): k for k, s in enumerate(states)}
    tables = _Tables(cfg)
    actions, next_idx, probs, tau_bar, r_bar, g_bar = [], [], [], [], [], []
    for s in states:
        acts = feasible_actions(s, cfg)
        row_next, row_probs = [], []
        row_tau = np.empty(len(acts))
        row_r = np.empty(len(acts))
        row_g = np.empty((len(acts), cfg.P))
        for a_loc, a in enumerate(acts):
            post = apply_action(s, a, cfg)
            rates = tables.rate_vector(post)
            total = rates.sum()
            tau = 1.0 / total
            live = np.flatnonzero(rates)
            key = post.key()
            idx = np.array([index[(key, tables.events[k])] for k in live], dtype=np.int64)
            row_next.append(idx)
            row_probs.append(rates[live] / total)
            row_tau[a_loc] = tau
            row_r[a_loc] = lump_reward(a, cfg) - holding_cost_rate(post, cfg) * tau
            row_g[a_loc] = queue_weight(post, cfg) * tau
        actions.append(acts)
        next_idx.append(row_next)
        probs.append(row_probs)
        tau_bar.append(row_tau)
        r_bar.append(row_r)
        g_bar.append(row_g)
    return ExplicitModel(cfg=cfg, states=states, index=index, actions=actions,
                         next_idx=next_idx, probs=probs, tau_bar=tau_bar,
                         r_bar=r_bar, g_bar=g_bar)


# --- policies ----------------------------------------------------------------

def uniform_policy(model: ExplicitModel) -> list[np.ndarray]:
    return [np.full(len(acts), 1.0 / len(acts)) for acts in model.actions]


def deterministic_policies(model: ExplicitModel, limit: int = 100_000):
    """Yields every deterministic stationary policy as one-hot rows.

    Only arrival states contribute choice; forced rows are single-action.
    """
    choice_states = [s_id for s_id in range(model.n_states)
                     if len(model.actions[s_id]) > 1]
    n_combos = 1
    for s_id in choice_states:
        n_combos *= len(model.actions[s_id])
        if n_combos > limit:
            raise TooLargeError(f"more than {limit} deterministic policies")
    for combo in product(*(range(len(model.actions[s])) for s in choice_states)):
        policy = [np.ones(1) if len(acts) == 1 else None for acts in model.actions]
        for s_id, choice in zip(choice_states, combo):
            row = np.zeros(len(model.actions[s_id]))
            row[choice] = 1.0
            policy[s_id] = row
        yield policy


def _epoch_chain(model: ExplicitModel, policy) -> np.ndarray:
    n = model.n_states
    P = np.zeros((n, n))
    for s_id in range(n):
        pi_row = policy[s_id]
        for a_loc, weight in enumerate(pi_row):
            if weight == 0.0:
                continue
            P[s_id, model.next_idx[s_id][a_loc]] += weight * model.probs[s_id][a_loc]
    return P


def _check_unichain(P: np.ndarray) -> None:
    support = csr_matrix(P > 1e-14)
    n_comp, labels = connected_components(support, directed=True, connection="strong")
    closed = 0
    for comp in range(n_comp):
        members = labels == comp
        if not (P[members][:, ~members] > 1e-14).any():
            closed += 1
    if closed != 1:
        raise MultiChainError(f"policy induces {closed} recurrent classes")


@dataclass
class StationarySolution:
    """Stationary epoch distribution and time-average reward / constraints."""

    d: np.ndarray
    J: float
    G: np.ndarray


def policy_evaluation(model: ExplicitModel, policy) -> StationarySolution:
    """Solves the stationary distribution of the policy's epoch chain and
    forms the time-average ratios."""
    P = _epoch_chain(model, policy)
    _check_unichain(P)
    n = model.n_states
    # (P^T - I) d = 0 with sum(d) = 1, solved as an overdetermined system.
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    d, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    d = np.clip(d, 0.0, None)
    d /= d.sum()
    if np.abs(P.T @ d - d).max() > 1e-9:
        raise MultiChainError("stationary distribution did not converge")

    r_pi = np.array([policy[s] @ model.r_bar[s] for s in range(n)])
    tau_pi = np.array([policy[s] @ model.tau_bar[s] for s in range(n)])
    g_pi = np.vstack([policy[s] @ model.g_bar[s] for s in range(n)])
    total_tau = float(d @ tau_pi)
    return StationarySolution(d=d, J=float(d @ r_pi) / total_tau,
                              G=(d @ g_pi) / total_tau)


# --- occupation-measure LP ----------------------------------------------------

@dataclass
class LPSolution:
    """Constrained optimum: occupation measure, value, policy, dual prices."""

    z: list[np.ndarray]
    J_star: float
    G_star: np.ndarray
    policy: list[np.ndarray]
    gamma: np.ndarray  # dual prices of the constraint rows


def _lp_matrices(model: ExplicitModel):
    n = model.n_states
    offsets = np.cumsum([0] + [len(acts) for acts in model.actions])
    n_vars = int(offsets[-1])
    c = np.concatenate(model.r_bar)
    tau = np.concatenate(model.tau_bar)
    g = np.vstack(model.g_bar)  # (n_vars, P)

    # Flow balance per state (one redundant row dropped) plus normalization.
    A_eq = np.zeros((n, n_vars))
    for s_id in range(n):
        for a_loc in range(len(model.actions[s_id])):
            var = offsets[s_id] + a_loc
            A_eq[s_id, var] += 1.0
            A_eq[model.next_idx[s_id][a_loc], var] -= model.probs[s_id][a_loc]
    A_eq = np.vstack([A_eq[:-1], tau[None, :]])
    b_eq = np.zeros(n)
    b_eq[-1] = 1.0
    return c, A_eq, b_eq, g.T.copy(), offsets, n_vars


def solve_constrained_lp(model: ExplicitModel, alpha=None,
                         retries: int = 3) -> LPSolution:
    """Maximizes time-average reward over occupation measures subject to the
    per-priority constraint bounds (default: the config's alpha)."""
    cfg = model.cfg
    alpha = np.asarray(cfg.alpha if alpha is None else alpha, dtype=np.float64)
    c, A_eq, b_eq, A_ub, offsets, n_vars = _lp_matrices(model)
    rng = np.random.default_rng(0)
    last_exc = None
    for attempt in range(retries + 1):
        be = b_eq if attempt == 0 else b_eq + rng.uniform(-1e-11, 1e-11, b_eq.size)
        bu = alpha if attempt == 0 else alpha + rng.uniform(0, 1e-11, alpha.size)
        try:
            res = solve_lp(c, A_eq=A_eq, b_eq=be, A_ub=A_ub, b_ub=bu, maximize=True)
        except SimplexError as exc:
            last_exc = exc
            continue
        if res.status == "optimal":
            return _extract_solution(model, res, offsets)
        last_exc = SolverFailureError(f"LP status {res.status}")
    raise SolverFailureError(f"constrained LP failed after {retries} retries: {last_exc}")


def _extract_solution(model: ExplicitModel, res, offsets) -> LPSolution:
    z_flat = np.clip(res.x, 0.0, None)
    z, policy = [], []
    for s_id in range(model.n_states):
        zs = z_flat[offsets[s_id]:offsets[s_id + 1]]
        z.append(zs)
        mass = zs.sum()
        if mass > 1e-12:
            policy.append(zs / mass)
        else:
            # Unvisited state: fall back to the first action (reject for
            # arrivals, release for departures), which drains toward empty.
            row = np.zeros(zs.size)
            row[0] = 1.0
            policy.append(row)
    g = np.vstack(model.g_bar)
    return LPSolution(
        z=z,
        J_star=float(res.objective),
        G_star=z_flat @ g,
        policy=policy,
        gamma=np.clip(res.duals_ub, 0.0, None),
    )


# --- Bellman / Poisson machinery -----------------------------------------------

def _lagrangian_rewards(model: ExplicitModel, gamma, alpha, smdp_correction: bool):
    gamma = np.asarray(gamma, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    out = []
    for s_id in range(model.n_states):
        g = model.g_bar[s_id]
        if smdp_correction:
            slack = g - alpha[None, :] * model.tau_bar[s_id][:, None]
        else:
            slack = g - alpha[None, :]
        out.append(model.r_bar[s_id] - slack @ gamma)
    return out


def _resolve_variant(model: ExplicitModel, smdp_correction) -> bool:
    if smdp_correction is None:
        return model.cfg.learner.smdp_correction
    return bool(smdp_correction)


def relative_value_iteration(model: ExplicitModel, gamma, *, alpha=None,
                             smdp_correction=None, tol: float = 1e-13,
                             max_iter: int = 500_000, damping: float = 0.5):
    """Solves the average-reward optimality equation at fixed multipliers.

    Iterates the damped operator (1-k)*T + k*I, whose fixed points coincide
    with the undamped ones while the damping guarantees aperiodicity; the
    returned gain is rescaled accordingly.  Returns (v, beta) with v[0] = 0.
    """
    alpha = model.cfg.alpha if alpha is None else alpha
    correction = _resolve_variant(model, smdp_correction)
    r_l = _lagrangian_rewards(model, gamma, alpha, correction)
    n = model.n_states
    kappa = damping
    v = np.zeros(n)
    for _ in range(max_iter):
        tv = np.empty(n)
        for s_id in range(n):
            q = r_l[s_id] + np.array([
                model.probs[s_id][a] @ v[model.next_idx[s_id][a]]
                for a in range(len(model.actions[s_id]))
            ])
            tv[s_id] = q.max()
        w = kappa * v + (1.0 - kappa) * tv
        diff = w - v
        span = diff.max() - diff.min()
        if span < tol:
            beta = (diff.max() + diff.min()) / 2.0 / (1.0 - kappa)
            return w - w[0], beta
        v = w - w[0]
    raise SolverFailureError(f"value iteration did not reach span {tol}")


def solve_poisson(model: ExplicitModel, policy, gamma, *, alpha=None,
                  smdp_correction=None):
    """Gain and bias of a fixed policy under the Lagrangian reward.

    Solves the linear system (I - P_pi) v + beta 1 = r_pi with v[0] = 0.
    """
    alpha = model.cfg.alpha if alpha is None else alpha
    correction = _resolve_variant(model, smdp_correction)
    r_l = _lagrangian_rewards(model, gamma, alpha, correction)
    n = model.n_states
    P = _epoch_chain(model, policy)
    r_pi = np.array([policy[s] @ r_l[s] for s in range(n)])
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = np.eye(n) - P
    A[:n, n] = 1.0
    A[n, 0] = 1.0
    rhs = np.concatenate([r_pi, [0.0]])
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return sol[:n], float(sol[n])


def bellman_residual(model: ExplicitModel, gamma, v: np.ndarray, beta: float,
                     policy=None, *, alpha=None, smdp_correction=None) -> float:
    """Max deviation from the optimality equation (or, given a policy, from
    the Poisson equation) at multipliers gamma."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (model.n_states,):
        raise ValueError(f"v has shape {v.shape}, expected ({model.n_states},)")
    alpha = model.cfg.alpha if alpha is None else alpha
    correction = _resolve_variant(model, smdp_correction)
    r_l = _lagrangian_rewards(model, gamma, alpha, correction)
    worst = 0.0
    for s_id in range(model.n_states):
        q = r_l[s_id] + np.array([
            model.probs[s_id][a] @ v[model.next_idx[s_id][a]]
            for a in range(len(model.actions[s_id]))
        ])
        target = q.max() if policy is None else float(policy[s_id] @ q)
        worst = max(worst, abs(beta + v[s_id] - target))
    return worst


# --- serialization -------------------------------------------------------------

def dump_model(model: ExplicitModel) -> dict:
    """JSON-ready dict: states, feasible actions, sparse kernel triplets,
    expected sojourns / rewards / constraint costs."""
    triplets = []
    for s_id in range(model.n_states):
        for a_loc in range(len(model.actions[s_id])):
            for nxt, pr in zip(model.next_idx[s_id][a_loc], model.probs[s_id][a_loc]):
                triplets.append([s_id, a_loc, int(nxt), float(pr)])
    return {
        "schema_version": 1,
        "states": [
            {"x": s.x.tolist(), "y": s.y.tolist(), "event": s.event.tag()}
            for s in model.states
        ],
        "actions": [[a.tag() for a in acts] for acts in model.actions],
        "Pr": triplets,
        "tau_bar": [row.tolist() for row in model.tau_bar],
        "r_bar": [row.tolist() for row in model.r_bar],
        "g_bar": [row.tolist() for row in model.g_bar],
    }
