"""Dense two-phase simplex for small exact LPs.

Built for the occupation-measure programs of the oracle: tens to a few
thousand variables, dense tableaus, accuracy ahead of speed.  Standard form
is reached by adding slacks to inequality rows and artificials wherever no
unit column is available; phase 1 minimizes the artificial mass, phase 2 the
real objective.  Dantzig pricing with a switch to Bland's rule after a run of
degenerate pivots keeps the method from cycling.

Duals are recovered from the final basis by solving B^T y = c_B against the
original columns.  Reported duals follow the derivative convention: they are
d(objective)/d(rhs) for the objective as returned (so inequality duals are
nonnegative for maximization problems and nonpositive for minimization).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LPResult", "SimplexError", "solve_lp"]


class SimplexError(RuntimeError):
    """The solver hit its iteration cap or a numerically unusable basis."""


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    objective: float | None = None
    duals_eq: np.ndarray | None = None
    duals_ub: np.ndarray | None = None


_STALL_LIMIT = 30


def solve_lp(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, *,
             maximize: bool = False, tol: float = 1e-9) -> LPResult:
    """Solves min/max c.x subject to A_eq x = b_eq, A_ub x <= b_ub, x >= 0."""
    c = np.asarray(c, dtype=np.float64)
    n = c.size
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=np.float64)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=np.float64)
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=np.float64)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=np.float64)
    if A_eq.shape != (b_eq.size, n) or A_ub.shape != (b_ub.size, n):
        raise ValueError("constraint matrix shapes do not match c / rhs")

    n_eq, n_ub = b_eq.size, b_ub.size
    m = n_eq + n_ub
    cmin = -c if maximize else c.copy()

    # Standard form: [A_eq 0; A_ub I][x; s] = [b_eq; b_ub], then flip rows to
    # make the rhs nonnegative.  flip[i] records the sign applied to row i.
    A = np.zeros((m, n + n_ub))
    A[:n_eq, :n] = A_eq
    A[n_eq:, :n] = A_ub
    A[n_eq:, n:] = np.eye(n_ub)
    rhs = np.concatenate([b_eq, b_ub])
    flip = np.where(rhs < 0, -1.0, 1.0)
    A *= flip[:, None]
    rhs = rhs * flip

    # Initial basis: the slack where its column survived the flip, otherwise
    # an artificial.
    need_art = [True] * n_eq + [flip[n_eq + i] < 0 for i in range(n_ub)]
    art_cols: dict[int, int] = {}
    n_total = n + n_ub + sum(need_art)
    T = np.zeros((m, n_total + 1))
    T[:, :n + n_ub] = A
    T[:, -1] = rhs
    basis = np.empty(m, dtype=np.int64)
    col = n + n_ub
    for i in range(m):
        if need_art[i]:
            T[i, col] = 1.0
            art_cols[i] = col
            basis[i] = col
            col += 1
        else:
            basis[i] = n + (i - n_eq)
    artificial = np.zeros(n_total, dtype=bool)
    artificial[n + n_ub:] = True

    # Phase 1: minimize the artificial mass.  Artificial columns start basic
    # and may leave, but never re-enter.
    c1 = np.zeros(n_total)
    c1[artificial] = 1.0
    status = _pivot_to_optimum(T, basis, c1, allowed=~artificial, tol=tol)
    if status == "unbounded":
        raise SimplexError("phase 1 reported unbounded; inconsistent tableau")
    art_mass = sum(T[i, -1] for i in range(m) if artificial[basis[i]])
    if art_mass > 1e-7:
        return LPResult(status="infeasible")
    _drive_out_artificials(T, basis, artificial, tol)

    # Phase 2 on the real costs; artificial columns can never re-enter.
    c2 = np.zeros(n_total)
    c2[:n] = cmin
    status = _pivot_to_optimum(T, basis, c2, allowed=~artificial, tol=tol)
    if status == "unbounded":
        return LPResult(status="unbounded")

    x_full = np.zeros(n_total)
    x_full[basis] = T[:, -1]
    x = x_full[:n]
    objective = float(c @ x)

    row_of_art = {col: row for row, col in art_cols.items()}
    duals = _recover_duals(A, basis, c2, n + n_ub, row_of_art)
    if duals is None:
        y = np.full(m, np.nan)
    else:
        y = duals * flip  # undo the row flips
    sign = -1.0 if maximize else 1.0
    return LPResult(
        status="optimal",
        x=x,
        objective=objective,
        duals_eq=sign * y[:n_eq],
        duals_ub=sign * y[n_eq:],
    )


def _reduced_costs(T, basis, costs) -> np.ndarray:
    cb = costs[basis]
    return costs - cb @ T[:, :-1]


def _pivot_to_optimum(T, basis, costs, allowed, tol) -> str:
    m = T.shape[0]
    max_iter = 200 * (T.shape[1] + m)
    stall = 0
    bland = False
    last_obj = np.inf
    for _ in range(max_iter):
        r = _reduced_costs(T, basis, costs)
        r[~allowed] = np.inf
        r[basis] = np.inf  # basic columns have zero reduced cost by construction
        if bland:
            candidates = np.flatnonzero(r < -tol)
            if candidates.size == 0:
                return "optimal"
            j = int(candidates[0])
        else:
            j = int(np.argmin(r))
            if r[j] >= -tol:
                return "optimal"
        col = T[:, j]
        positive = col > tol
        if not positive.any():
            return "unbounded"
        ratios = np.full(m, np.inf)
        ratios[positive] = T[positive, -1] / col[positive]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * (1 + abs(best)))
        i = int(ties[np.argmin(basis[ties])])
        _pivot(T, i, j)
        basis[i] = j
        obj = float(costs[basis] @ T[:, -1])
        if obj > last_obj - 1e-12:
            stall += 1
            if stall >= _STALL_LIMIT:
                bland = True
        else:
            stall = 0
        last_obj = obj
    raise SimplexError(f"no convergence within {max_iter} pivots")


def _pivot(T, i, j) -> None:
    T[i] = T[i] / T[i, j]
    T[i, j] = 1.0
    col = T[:, j].copy()
    col[i] = 0.0
    T -= np.outer(col, T[i])
    T[:, j] = 0.0
    T[i, j] = 1.0


def _drive_out_artificials(T, basis, artificial, tol) -> None:
    """Replaces artificial basics at zero level; all-zero rows stay parked."""
    for i in range(T.shape[0]):
        if not artificial[basis[i]]:
            continue
        row = T[i, :-1]
        candidates = np.flatnonzero((np.abs(row) > 1e3 * tol) & ~artificial)
        if candidates.size:
            j = int(candidates[0])
            _pivot(T, i, j)
            basis[i] = j
        # otherwise the row is redundant; the artificial stays basic at 0 and
        # is barred from pricing, so it never affects phase 2.


def _recover_duals(A, basis, costs, n_real, row_of_art):
    """Solves B^T y = c_B on the original (flipped) columns.

    A parked artificial contributes its genuine unit column, which pins the
    dual of its (redundant) row to zero and keeps the basis square.
    """
    m = A.shape[0]
    B = np.zeros((m, m))
    for k, j in enumerate(basis):
        if j < n_real:
            B[:, k] = A[:, j]
        else:
            B[row_of_art[j], k] = 1.0
    cb = costs[basis].astype(np.float64)
    try:
        y = np.linalg.solve(B.T, cb)
    except np.linalg.LinAlgError:
        y, *_ = np.linalg.lstsq(B.T, cb, rcond=None)
    if not np.allclose(B.T @ y, cb, atol=1e-6):
        return None
    return y
