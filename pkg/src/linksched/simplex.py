"""Dense two-phase primal simplex with Bland's anti-cycling rule.

The LPs solved here are small and heavily degenerate, so Bland's rule
is used unconditionally: entering variable is the lowest-index column
with reduced cost below -OPT_TOL, leaving row breaks ratio ties by the
lowest basis index.  Reduced costs are recomputed from the basis every
iteration rather than carried, trading a little speed for drift-free
pivoting.

Equality rows that phase 1 proves redundant (their artificial stays
basic at a value <= FEAS_TOL and cannot be pivoted out) are dropped
before phase 2.  Duals are read off the final reduced costs of the
identity columns, so every kept row reports a multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPT_TOL = 1e-9  # reduced cost threshold for optimality
FEAS_TOL = 1e-9  # phase-1 objective / artificial value threshold
PIV_TOL = 1e-11  # smallest pivot element admitted in the ratio test
DRIVE_TOL = 1e-7  # smallest pivot used when driving artificials out


class SimplexAnomaly(RuntimeError):
    """Internal solver failure (e.g. a descent ray in phase 1)."""


@dataclass(frozen=True)
class LinearProgram:
    """min c.x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x >= 0."""

    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray

    @staticmethod
    def build(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None) -> "LinearProgram":
        c = np.asarray(c, dtype=float)
        n = c.shape[0]

        def norm(A, b):
            if A is None:
                return np.zeros((0, n)), np.zeros(0)
            A = np.asarray(A, dtype=float).reshape(-1, n)
            return A, np.asarray(b, dtype=float).reshape(-1)

        A_eq, b_eq = norm(A_eq, b_eq)
        A_ub, b_ub = norm(A_ub, b_ub)
        return LinearProgram(c, A_eq, b_eq, A_ub, b_ub)


@dataclass(frozen=True)
class SimplexResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    objective: float | None = None
    duals_eq: np.ndarray | None = None
    duals_ub: np.ndarray | None = None
    dropped_eq_rows: tuple[int, ...] = ()
    iterations: int = 0


def _bland_iterate(T, basis, cost, allowed, max_iter=200_000):
    """Run Bland pivots in place until optimal or a ray appears.

    Returns ("optimal", iters) or ("unbounded", iters).  T has shape
    (m, ncols + 1) with the RHS in the last column; basis[i] is the
    basic column of row i.
    """
    m, w = T.shape
    ncols = w - 1
    iters = 0
    col_ids = np.arange(ncols)
    while True:
        y = cost[basis] @ T[:, :ncols]
        reduced = cost[:ncols] - y
        candidates = col_ids[allowed & (reduced < -OPT_TOL)]
        if candidates.size == 0:
            return "optimal", iters
        j = int(candidates[0])  # Bland: lowest index enters
        col = T[:, j]
        pos = col > PIV_TOL
        if not pos.any():
            return "unbounded", iters
        rhs = T[:, ncols]
        ratios = np.full(m, np.inf)
        ratios[pos] = rhs[pos] / col[pos]
        rmin = ratios.min()
        ties = np.nonzero(ratios <= rmin + 1e-12 * (1.0 + abs(rmin)))[0]
        r = int(ties[np.argmin(np.asarray(basis)[ties])])  # Bland tie-break
        _pivot(T, r, j)
        basis[r] = j
        iters += 1
        if iters > max_iter:
            raise SimplexAnomaly("pivot limit exceeded")


def _pivot(T, r, j):
    T[r] /= T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])
    T[:, j] = 0.0
    T[r, j] = 1.0
    # keep the RHS nonnegative against floating drift
    rhs = T[:, -1]
    np.clip(rhs, 0.0, None, out=rhs)


def solve_simplex(lp: LinearProgram) -> SimplexResult:
    """Two-phase solve; statuses "optimal", "infeasible", "unbounded"."""
    n = lp.c.shape[0]
    me, mu = lp.A_eq.shape[0], lp.A_ub.shape[0]
    m = me + mu

    A = np.zeros((m, n + mu))
    b = np.zeros(m)
    A[:me, :n] = lp.A_eq
    b[:me] = lp.b_eq
    A[me:, :n] = lp.A_ub
    A[me:, n : n + mu] = np.eye(mu)
    b[me:] = lp.b_ub

    flip = b < 0.0
    A[flip] *= -1.0
    b[flip] *= -1.0

    # one artificial per row, except ub rows whose +1 slack can start basic
    needs_art = np.ones(m, dtype=bool)
    for i in range(me, m):
        if not flip[i]:
            needs_art[i] = False
    art_rows = np.nonzero(needs_art)[0]
    na = art_rows.size
    ncols = n + mu + na

    T = np.zeros((m, ncols + 1))
    T[:, : n + mu] = A
    T[:, ncols] = b
    basis = [0] * m
    for a_idx, row in enumerate(art_rows):
        T[row, n + mu + a_idx] = 1.0
        basis[row] = n + mu + a_idx
    for i in range(me, m):
        if not needs_art[i]:
            basis[i] = n + i - me  # its own slack

    art_mask = np.zeros(ncols, dtype=bool)
    art_mask[n + mu :] = True

    phase1_cost = np.zeros(ncols)
    phase1_cost[art_mask] = 1.0
    allowed = np.ones(ncols, dtype=bool)
    status, it1 = _bland_iterate(T, basis, phase1_cost, allowed)
    if status == "unbounded":
        raise SimplexAnomaly("descent ray in phase 1")
    phase1_obj = float(phase1_cost[basis] @ T[:, ncols])
    if phase1_obj > FEAS_TOL:
        return SimplexResult(status="infeasible", iterations=it1)

    # pivot lingering artificials out, or drop their (redundant) rows
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] >= n + mu:
            row = T[i]
            piv = -1
            for j in range(n + mu):
                if abs(row[j]) > DRIVE_TOL:
                    piv = j
                    break
            if piv >= 0:
                _pivot(T, i, piv)
                basis[i] = piv
            else:
                keep[i] = False
    dropped = tuple(int(i) for i in np.nonzero(~keep)[0] if i < me)
    if not keep.all():
        T = T[keep]
        basis = [bv for bv, k in zip(basis, keep) if k]

    phase2_cost = np.zeros(ncols)
    phase2_cost[:n] = lp.c
    allowed = ~art_mask
    status, it2 = _bland_iterate(T, basis, phase2_cost, allowed)
    iterations = it1 + it2
    if status == "unbounded":
        return SimplexResult(status="unbounded", iterations=iterations)

    x = np.zeros(n + mu + na)
    rhs = T[:, ncols]
    for i, bv in enumerate(basis):
        x[bv] = rhs[i]
    xout = x[:n].copy()
    objective = float(lp.c @ xout)

    # duals from identity-column reduced costs: r_j = 0 - y_i on e_i cols
    y_row = phase2_cost[basis] @ T[:, :ncols]
    reduced = phase2_cost[:ncols] - y_row
    duals = np.zeros(m)
    known = np.zeros(m, dtype=bool)
    row_alive = {}
    alive = np.nonzero(keep)[0]
    for new_i, old_i in enumerate(alive):
        row_alive[int(old_i)] = new_i
    for a_idx, row in enumerate(art_rows):
        if int(row) in row_alive:
            duals[row] = -reduced[n + mu + a_idx]
            known[row] = True
    for i in range(me, m):
        if not needs_art[i] and int(i) in row_alive:
            duals[i] = -reduced[n + i - me]
            known[i] = True
    duals[flip & known] *= -1.0
    return SimplexResult(
        status="optimal",
        x=xout,
        objective=objective,
        duals_eq=duals[:me].copy(),
        duals_ub=duals[me:].copy(),
        dropped_eq_rows=dropped,
        iterations=iterations,
    )
