"""Independent reference computations for the test suite.

Everything here is written from first principles on purpose: no
imports from the package beyond plain data (configs), so agreement
between these oracles and the library is evidence, not tautology.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from numpy.polynomial.legendre import leggauss


def gauss_integral(f, a: float, b: float, n: int = 64) -> float:
    """Gauss-Legendre quadrature of f over [a, b]."""
    x, w = leggauss(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return float(half * np.sum(w * np.vectorize(f)(mid + half * x)))


def uniform_bin_stats(h_min: float, h_max: float, bins: int):
    """(edges, masses, mean of 1/h per bin) for a uniform gain law."""
    edges = [h_min + k * (h_max - h_min) / bins for k in range(bins + 1)]
    dens = 1.0 / (h_max - h_min)
    masses, inv_means = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        p = dens * (hi - lo)
        masses.append(p)
        inv_means.append(dens * math.log(hi / lo) / p)
    return edges, masses, inv_means


# --- exhaustive policy evaluation -----------------------------------------

def enumerate_policies(Q: int, s_max: int, bins: int, a_max: int = 0):
    """All maps (q, bin) -> rate with rate <= min(q, s_max), q >= 1.

    With a_max > 0 the rate must also keep q - s <= Q - a_max, so the
    buffer can absorb the largest arrival burst without loss.  That is
    the lossless action set; leaving it lets a policy shed traffic at
    the buffer cap and undercut the true tradeoff.
    """
    states = [(q, k) for q in range(1, Q + 1) for k in range(bins)]
    choice_sets = [range(max(0, q - (Q - a_max)), min(q, s_max) + 1)
                   for q, _ in states]
    for rates in itertools.product(*choice_sets):
        yield dict(zip(states, rates))


def stationary_queue(policy: dict, Q: int, alphas, masses) -> np.ndarray:
    """Stationary law of the queue chain under a deterministic policy.

    Independent construction: transition by q' = min(max(q - s, 0) + a, Q)
    with s = policy[(q, k)] and the bin drawn with probability masses[k].
    """
    n = Q + 1
    T = np.zeros((n, n))
    for q in range(n):
        for k, pk in enumerate(masses):
            s = policy[(q, k)] if q >= 1 else 0
            for a, pa in enumerate(alphas):
                qn = min(max(q - s, 0) + a, Q)
                T[q, qn] += pk * pa
    A = np.vstack([T.T - np.eye(n), np.ones(n)])
    b = np.concatenate([np.zeros(n), [1.0]])
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return pi


def policy_delay_power(policy: dict, Q: int, alphas, masses, inv_means,
                       xi) -> tuple[float, float]:
    """(average delay, average power) from the exact stationary law."""
    pi = stationary_queue(policy, Q, alphas, masses)
    abar = sum(a * p for a, p in enumerate(alphas))
    delay = float(sum(q * pi[q] for q in range(Q + 1))) / abar
    power = 0.0
    for q in range(1, Q + 1):
        for k, pk in enumerate(masses):
            s = policy[(q, k)]
            power += pi[q] * pk * xi[s] * inv_means[k]
    return delay, power


def lower_hull(points):
    """Corners of the lower convex hull of (D, P) points, sorted by D.

    Trailing corners that do not improve P are cut: the hull of a
    tradeoff curve ends at its lowest power.
    """
    pts = sorted(set((round(d, 12), round(p, 12)) for d, p in points))
    hull: list[tuple[float, float]] = []
    for d, p in pts:
        while len(hull) >= 2:
            (d0, p0), (d1, p1) = hull[-2], hull[-1]
            if (p1 - p0) * (d - d0) >= (p - p0) * (d1 - d0):
                hull.pop()
            else:
                break
        hull.append((d, p))
    best = min(p for _, p in hull)
    while hull and hull[-1][1] > best:
        hull.pop()
    while len(hull) >= 2 and hull[-2][1] <= hull[-1][1]:
        hull.pop()
    return hull


def hull_value(hull, budget: float) -> float:
    """min P subject to D <= budget over the convex hull, inf if empty."""
    ds = [d for d, _ in hull]
    ps = [p for _, p in hull]
    if budget < ds[0]:
        return math.inf
    if budget >= ds[-1]:
        return ps[-1]
    return float(np.interp(budget, ds, ps))


def random_bounded_lp(rng: np.random.Generator):
    """A feasible, bounded random LP (<= 6 vars, <= 5 rows).

    Feasible by construction (right-hand sides generated from a known
    nonnegative point, zeroed coordinates included for degeneracy) and
    bounded by a simplex row sum(x) <= R.  Returns (c, A_eq, b_eq,
    A_ub, b_ub).
    """
    n = int(rng.integers(1, 7))
    m_eq = int(rng.integers(0, 3))
    m_ub = int(rng.integers(0, 3))
    x0 = rng.uniform(0.0, 2.0, n)
    x0[rng.random(n) < 0.3] = 0.0
    def coeffs(rows):
        A = rng.uniform(-2.0, 2.0, (rows, n))
        if rng.random() < 0.3:
            A = np.round(A, 1)
        return A
    A_eq = coeffs(m_eq)
    if m_eq >= 1 and rng.random() < 0.2:
        A_eq[-1] = A_eq[0]  # redundant row
    b_eq = A_eq @ x0
    A_ub = coeffs(m_ub)
    slack = rng.uniform(0.0, 1.0, m_ub)
    slack[rng.random(m_ub) < 0.3] = 0.0  # active at the seed point
    b_ub = A_ub @ x0 + slack
    A_ub = np.vstack([A_ub, np.ones((1, n))])
    b_ub = np.concatenate([b_ub, [x0.sum() + rng.uniform(0.0, 2.0)]])
    c = rng.uniform(-1.0, 1.0, n)
    return c, A_eq, b_eq, A_ub, b_ub


# --- brute-force LP oracle --------------------------------------------------

def best_basic_solution(c, A_eq, b_eq, A_ub, b_ub, tol: float = 1e-9):
    """Optimal objective by enumerating all basic solutions.

    Slack columns are appended for the inequality rows; every square
    column subset is tried.  Returns None when nothing is feasible.
    """
    c = np.asarray(c, float)
    blocks_A, blocks_b = [], []
    n = len(c)
    if A_eq is not None and len(A_eq):
        blocks_A.append(np.asarray(A_eq, float))
        blocks_b.append(np.asarray(b_eq, float))
    n_ub = 0
    if A_ub is not None and len(A_ub):
        A_ub = np.asarray(A_ub, float)
        n_ub = A_ub.shape[0]
        blocks_A.append(np.hstack([A_ub, np.eye(n_ub)]))
        blocks_b.append(np.asarray(b_ub, float))
    if blocks_A:
        width = n + n_ub
        rows = []
        for blk in blocks_A:
            pad = np.zeros((blk.shape[0], width - blk.shape[1]))
            rows.append(np.hstack([blk, pad]))
        A = np.vstack(rows)
        b = np.concatenate(blocks_b)
    else:
        A = np.zeros((0, n))
        b = np.zeros(0)
    m, width = A.shape
    cost = np.concatenate([c, np.zeros(width - n)])
    if m == 0:
        return 0.0 if (cost >= -tol).all() else None
    # redundant rows (e.g. a duplicated equality) make every square
    # submatrix singular; keep a maximal independent subset
    keep: list[int] = []
    for i in range(m):
        if np.linalg.matrix_rank(A[keep + [i]], tol=1e-9) > len(keep):
            keep.append(i)
    A, b = A[keep], b[keep]
    m = len(keep)
    best = None
    for cols in itertools.combinations(range(width), m):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        xb = np.linalg.solve(B, b)
        if (xb < -tol).any():
            continue
        x = np.zeros(width)
        x[list(cols)] = xb
        if np.abs(A @ x - b).max() > 1e-7:
            continue
        val = float(cost @ x)
        if best is None or val < best:
            best = val
    return best
