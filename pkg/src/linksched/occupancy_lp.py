"""Occupancy-measure LP over (queue, rate, channel-bin) triples.

The long-run behavior of any stationary schedule is captured by the
measure g[q][s][k]: the stationary probability of sitting at queue
length q, transmitting s packets, while the channel is in bin k.
Average delay and average power are linear in g, so the power-minimal
schedule under a delay cap is a linear program.

Feasible measures satisfy, besides nonnegativity and the structural
zeros (a schedule may never send more than it holds, nor leave room
for an overflow), two families of equalities:

  * bin masses: summed over (q, s), the measure reproduces the channel
    bin probabilities;
  * balance per (queue, bin) pair: the chance of landing in queue q'
    while the fresh channel draw falls in bin k' equals p_{k'} times
    the total inflow into q'.  The channel is drawn independently each
    slot, so the stationary joint law of (q, bin) is a product; writing
    balance per pair (rather than aggregated over bins) is what pins
    that product structure inside the LP.  Aggregated balance alone
    admits measures that correlate queue and channel, which no causal
    schedule can realize, and prices them too cheaply.

State spaces are 0-based: q in {0..Q}, s in {0..S_max}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    ChannelDiscretization,
    SystemConfig,
    mean_arrival_rate,
)
from .simplex import FEAS_TOL, LinearProgram, SimplexResult, solve_simplex

ONE_HOT_TOL = 1e-9
TRANSIENT_TOL = 1e-12


class ReducibleChainError(ValueError):
    """The policy-induced queue chain has several closed classes."""


def admissible_pairs(cfg: SystemConfig) -> list[tuple[int, int]]:
    """(q, s) with 0 <= q - s <= Q - A, s <= S_max; q-major order."""
    A = cfg.arrival.max_arrivals
    out = []
    for q in range(cfg.Q + 1):
        for s in range(cfg.S_max + 1):
            if 0 <= q - s <= cfg.Q - A:
                out.append((q, s))
    return out


@dataclass(frozen=True)
class OccupancyMeasure:
    """Stationary measure over admissible (q, s, bin) triples."""

    cfg: SystemConfig
    disc: ChannelDiscretization
    values: np.ndarray  # shape (Q+1, S_max+1, bins); zero off-support

    def __post_init__(self):
        self.values.setflags(write=False)

    def queue_marginal(self) -> np.ndarray:
        return self.values.sum(axis=(1, 2))

    def rate_marginal(self) -> np.ndarray:
        """G(q, s): measure integrated over the channel."""
        return self.values.sum(axis=2)

    def bin_residual(self) -> float:
        sums = self.values.sum(axis=(0, 1))
        return float(np.abs(sums - np.asarray(self.disc.masses)).max())

    def balance_residual(self) -> float:
        """Worst violation of queue balance, aggregated over bins."""
        G = self.rate_marginal()
        alphas = self.cfg.arrival.alphas
        worst = 0.0
        for qn in range(self.cfg.Q + 1):
            inflow = 0.0
            for (q, s) in admissible_pairs(self.cfg):
                a = qn - (q - s)
                if 0 <= a < len(alphas):
                    inflow += alphas[a] * G[q, s]
            worst = max(worst, abs(inflow - G[qn].sum()))
        return worst

    def structural_zero_mass(self) -> float:
        mask = np.ones(self.values.shape[:2], dtype=bool)
        for (q, s) in admissible_pairs(self.cfg):
            mask[q, s] = False
        return float(np.abs(self.values[mask]).max(initial=0.0))


@dataclass(frozen=True)
class Policy:
    """Per-(q, bin) rate choice, probabilistic or deterministic.

    table[q][k][s] is the probability of rate s.  Rows with no support
    in the source measure are transient: by convention they drain the
    queue as fast as allowed (rate min(q, S_max)) and are flagged.
    """

    cfg: SystemConfig
    disc: ChannelDiscretization
    kind: str  # "probabilistic" | "deterministic"
    table: np.ndarray  # (Q+1, bins, S_max+1)
    transient: np.ndarray  # (Q+1, bins) bool
    sigma: np.ndarray  # (Q+1, bins) int; argmax rate per row

    def __post_init__(self):
        self.table.setflags(write=False)
        self.transient.setflags(write=False)
        self.sigma.setflags(write=False)

    def rate_for(self, q: int, h: float) -> int:
        """Deterministic lookup; h routed to its bin, h_min to bin 0."""
        return int(self.sigma[q, self.disc.bin_of(h)])

    def sample_rate(self, q: int, h: float, u: float) -> int:
        """Rate drawn from the row's distribution; u is uniform [0, 1).

        Deterministic rows ignore u, so the draw stream stays aligned
        across policies under a shared seed.
        """
        row = self.table[q, self.disc.bin_of(h)]
        acc = 0.0
        for s, p in enumerate(row):
            acc += p
            if u < acc:
                return s
        return int(len(row) - 1)


@dataclass(frozen=True)
class LpSolution:
    status: str  # "optimal" | "infeasible" | "unbounded"
    objective: float | None
    measure: OccupancyMeasure | None
    delay_dual: float
    iterations: int


@dataclass(frozen=True)
class OccupancyLp:
    """Matrix form plus the (q, s, k) meaning of each column."""

    cfg: SystemConfig
    disc: ChannelDiscretization
    lp: LinearProgram
    var_index: tuple[tuple[int, int, int], ...]
    d_th: float | None

    @property
    def num_vars(self) -> int:
        return len(self.var_index)


def build_occupancy_lp(
    cfg: SystemConfig,
    disc: ChannelDiscretization,
    d_th: float | None,
    objective: str = "power",
) -> OccupancyLp:
    """Assemble the LP; objective "power" or "delay".

    The delay row is included only for a finite d_th with a nonzero
    arrival rate.  Variable order is q-major, then s, then k.
    """
    pairs = admissible_pairs(cfg)
    M = disc.bins
    p = np.asarray(disc.masses)
    r = np.asarray(disc.inv_means)
    alphas = cfg.arrival.alphas
    abar = mean_arrival_rate(cfg.arrival)
    nv = len(pairs) * M
    var_index = []
    col_of = {}
    for (q, s) in pairs:
        for k in range(M):
            col_of[(q, s, k)] = len(var_index)
            var_index.append((q, s, k))

    power_c = np.zeros(nv)
    delay_c = np.zeros(nv)
    for (q, s, k), j in col_of.items():
        power_c[j] = cfg.xi(s) * r[k]
        delay_c[j] = q / abar if abar > 0 else float(q)
    c = power_c if objective == "power" else delay_c

    # inflow[qn, j]: probability weight pushed into queue qn by column j
    inflow = np.zeros((cfg.Q + 1, nv))
    for (q, s) in pairs:
        base = col_of[(q, s, 0)]
        for a, alpha in enumerate(alphas):
            qn = q - s + a
            inflow[qn, base : base + M] += alpha

    n_rows = M + (cfg.Q + 1) * M
    A_eq = np.zeros((n_rows, nv))
    b_eq = np.zeros(n_rows)
    for k in range(M):
        cols = [col_of[(q, s, k)] for (q, s) in pairs]
        A_eq[k, cols] = 1.0
        b_eq[k] = p[k]
    row = M
    for qn in range(cfg.Q + 1):
        for k in range(M):
            A_eq[row] = -p[k] * inflow[qn]
            for s in range(cfg.S_max + 1):
                j = col_of.get((qn, s, k))
                if j is not None:
                    A_eq[row, j] += 1.0
            row += 1

    A_ub = b_ub = None
    if d_th is not None and math.isfinite(d_th) and abar > 0:
        A_ub = delay_c.reshape(1, -1)
        b_ub = np.array([d_th])

    lp = LinearProgram.build(c, A_eq=A_eq, b_eq=b_eq, A_ub=A_ub, b_ub=b_ub)
    return OccupancyLp(cfg, disc, lp, tuple(var_index), d_th)


def _measure_from_x(olp: OccupancyLp, x: np.ndarray) -> OccupancyMeasure:
    g = np.zeros((olp.cfg.Q + 1, olp.cfg.S_max + 1, olp.disc.bins))
    for (q, s, k), v in zip(olp.var_index, x):
        g[q, s, k] = v if v > 0.0 else 0.0
    return OccupancyMeasure(olp.cfg, olp.disc, g)


def _finish(olp: OccupancyLp, res: SimplexResult) -> LpSolution:
    if res.status != "optimal":
        return LpSolution(res.status, None, None, 0.0, res.iterations)
    dual = 0.0
    if res.duals_ub is not None and res.duals_ub.size:
        dual = -float(res.duals_ub[0])  # price of one unit of delay budget
    return LpSolution(
        "optimal", res.objective, _measure_from_x(olp, res.x), dual, res.iterations
    )


def solve_constrained(
    cfg: SystemConfig, disc: ChannelDiscretization, d_th: float | None
) -> LpSolution:
    """Minimum average power subject to average delay <= d_th."""
    olp = build_occupancy_lp(cfg, disc, d_th, objective="power")
    return _finish(olp, solve_simplex(olp.lp))


def min_delay(
    cfg: SystemConfig, disc: ChannelDiscretization
) -> tuple[float, OccupancyMeasure | None]:
    """Smallest achievable average delay (0 when there are no arrivals)."""
    olp = build_occupancy_lp(cfg, disc, None, objective="delay")
    res = solve_simplex(olp.lp)
    if res.status != "optimal":
        raise RuntimeError(f"min-delay solve returned {res.status}")
    if mean_arrival_rate(cfg.arrival) == 0:
        return 0.0, _measure_from_x(olp, res.x)
    return float(res.objective), _measure_from_x(olp, res.x)


def solve_lagrangian(
    cfg: SystemConfig, disc: ChannelDiscretization, lam: float
) -> tuple[LpSolution, float, float]:
    """Minimize power + lam * delay; returns (solution, delay, power)."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    olp = build_occupancy_lp(cfg, disc, None, objective="power")
    abar = mean_arrival_rate(cfg.arrival)
    delay_c = np.array(
        [q / abar if abar > 0 else 0.0 for (q, _s, _k) in olp.var_index]
    )
    weighted = LinearProgram.build(
        olp.lp.c + lam * delay_c, A_eq=olp.lp.A_eq, b_eq=olp.lp.b_eq
    )
    res = solve_simplex(weighted)
    if res.status != "optimal":
        raise RuntimeError(f"weighted solve returned {res.status}")
    measure = _measure_from_x(olp, res.x)
    delay, power = evaluate_measure(measure)
    sol = LpSolution("optimal", power, measure, lam, res.iterations)
    return sol, delay, power


def evaluate_measure(m: OccupancyMeasure) -> tuple[float, float]:
    """(average delay, average power) of a measure.

    Delay is mean queue length over mean arrival rate; power weights
    each cell by xi(s) * E[1/h | bin].
    """
    abar = mean_arrival_rate(m.cfg.arrival)
    qs = np.arange(m.cfg.Q + 1, dtype=float)
    mean_q = float(qs @ m.values.sum(axis=(1, 2)))
    delay = mean_q / abar if abar > 0 else 0.0
    xi = np.asarray(m.cfg.xi_table)
    r = np.asarray(m.disc.inv_means)
    power = float(np.einsum("qsk,s,k->", m.values, xi, r))
    return delay, power


def extract_policy(m: OccupancyMeasure) -> Policy:
    """Conditional rate law f(s | q, bin) = g / sum_s g.

    Zero-mass rows are transient: flagged, with the drain-fast
    convention sigma = min(q, S_max).  Row entries whose absolute mass
    sits below the solver feasibility tolerance are dust, not evidence
    of randomization, and are dropped before normalizing.
    """
    cfg, disc = m.cfg, m.disc
    Q, S, M = cfg.Q, cfg.S_max, disc.bins
    table = np.zeros((Q + 1, M, S + 1))
    transient = np.zeros((Q + 1, M), dtype=bool)
    sigma = np.zeros((Q + 1, M), dtype=int)
    deterministic = True
    for q in range(Q + 1):
        for k in range(M):
            row = m.values[q, :, k].copy()
            cleaned = np.where(row < FEAS_TOL, 0.0, row)
            if cleaned.sum() > TRANSIENT_TOL:
                row = cleaned
            denom = float(row.sum())
            if denom <= TRANSIENT_TOL:
                transient[q, k] = True
                sigma[q, k] = min(q, S)
                table[q, k, sigma[q, k]] = 1.0
                continue
            f = row / denom
            table[q, k] = f
            sigma[q, k] = int(np.argmax(f))
            if f[sigma[q, k]] < 1.0 - ONE_HOT_TOL:
                deterministic = False
    kind = "deterministic" if deterministic else "probabilistic"
    return Policy(cfg, disc, kind, table, transient, sigma)


def _queue_kernel(cfg: SystemConfig, disc: ChannelDiscretization, pol: Policy):
    """Transition matrix of the queue chain under the policy (clipped)."""
    Q = cfg.Q
    alphas = cfg.arrival.alphas
    p = disc.masses
    T = np.zeros((Q + 1, Q + 1))
    for q in range(Q + 1):
        for k in range(disc.bins):
            for s in range(cfg.S_max + 1):
                f = pol.table[q, k, s]
                if f <= 0.0:
                    continue
                left = max(q - s, 0)
                for a, alpha in enumerate(alphas):
                    T[q, min(left + a, Q)] += p[k] * f * alpha
    return T


def _closed_classes(T: np.ndarray) -> list[list[int]]:
    n = T.shape[0]
    adj = T > 1e-15
    reach = (adj | np.eye(n, dtype=bool)).astype(float)
    for _ in range(n):
        new = ((reach @ reach) > 0).astype(float)
        if (new == reach).all():
            break
        reach = new
    reach = reach > 0
    classes = []
    seen = set()
    for i in range(n):
        if i in seen:
            continue
        cls = [j for j in range(n) if reach[i, j] and reach[j, i]]
        seen.update(cls)
        closed = all(not adj[a, b] or b in cls for a in cls for b in range(n))
        if closed:
            classes.append(cls)
    return classes


def policy_to_measure(
    cfg: SystemConfig, disc: ChannelDiscretization, pol: Policy
) -> OccupancyMeasure:
    """Stationary measure of the queue chain the policy induces.

    Raises ReducibleChainError when the chain has more than one closed
    class (the stationary law is then ambiguous); the message names two
    of them.
    """
    T = _queue_kernel(cfg, disc, pol)
    closed = _closed_classes(T)
    if len(closed) > 1:
        raise ReducibleChainError(
            f"reducible chain: states {closed[0]} and states {closed[1]} "
            "are both closed"
        )
    n = cfg.Q + 1
    A = T.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    p = np.asarray(disc.masses)
    g = pi[:, None, None] * pol.table.transpose(0, 2, 1) * p[None, None, :]
    return OccupancyMeasure(cfg, disc, g)


# --- text dumps -----------------------------------------------------------

def measure_to_text(m: OccupancyMeasure) -> str:
    lines = ["q,s,k,g"]
    for q in range(m.cfg.Q + 1):
        for s in range(m.cfg.S_max + 1):
            for k in range(m.disc.bins):
                v = m.values[q, s, k]
                if v != 0.0:
                    lines.append(f"{q},{s},{k},{v:.17g}")
    return "\n".join(lines) + "\n"


def policy_to_text(pol: Policy) -> str:
    lines = ["q,k,s,prob,transient"]
    for q in range(pol.cfg.Q + 1):
        for k in range(pol.disc.bins):
            flag = int(pol.transient[q, k])
            for s in range(pol.cfg.S_max + 1):
                f = pol.table[q, k, s]
                if f != 0.0:
                    lines.append(f"{q},{k},{s},{f:.17g},{flag}")
    return "\n".join(lines) + "\n"


def policy_from_text(
    text: str, cfg: SystemConfig, disc: ChannelDiscretization
) -> Policy:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if lines[0] != "q,k,s,prob,transient":
        raise ValueError(f"unexpected policy header: {lines[0]!r}")
    Q, S, M = cfg.Q, cfg.S_max, disc.bins
    table = np.zeros((Q + 1, M, S + 1))
    transient = np.zeros((Q + 1, M), dtype=bool)
    for ln in lines[1:]:
        qs, ks, ss, fs, ts = ln.split(",")
        table[int(qs), int(ks), int(ss)] = float(fs)
        if int(ts):
            transient[int(qs), int(ks)] = True
    sigma = table.argmax(axis=2)
    deterministic = bool((table.max(axis=2) >= 1.0 - ONE_HOT_TOL).all())
    kind = "deterministic" if deterministic else "probabilistic"
    return Policy(cfg, disc, kind, table, sigma=sigma, transient=transient)
