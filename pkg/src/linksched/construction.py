"""Deterministic threshold schedules built from an LP occupancy measure.

The LP returns a measure on (queue, rate, bin) triples; conditioning on
(q, bin) it may randomize between rates.  This module trades that
randomization away: the channel range is cut into K equal cells, and
inside every cell the rates a queue state uses are stacked into
adjacent half-open gain intervals whose lengths are chosen so each rate
keeps exactly the probability mass the measure gave it.  The result is
a pure threshold rule ("at queue q, transmit s whenever the gain lands
in (lo, hi]") that preserves the channel marginal, the queue balance,
and the average delay of its source, while its average power stays
within a factor 1 + (h_max - h_min) / (K * h_min) of the source power.

Within a cell the rate intervals can be laid out two ways:

  * "rate_descending" (default): the highest rate takes the low-gain
    end of the cell.  This is the conservative layout: it can only
    cost more than the source arrangement, so the power ratio reported
    by power_ratio is a true upper bound, >= 1 for any source.
  * "rate_ascending": the highest rate takes the high-gain end.  This
    layout is cheaper, and when the source itself randomizes inside a
    cell it can undercut the source power; the ratio may then dip
    below 1 and power_ratio will reject it.

All interval bookkeeping is exact; sampling is used only for the
report-style density match against the channel law.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import ChannelDiscretization, SystemConfig, mean_arrival_rate
from .occupancy_lp import OccupancyMeasure, admissible_pairs

PARTITION_TOL = 1e-12
RATE_TOL = 1e-10
RATIO_TOL = 1e-10


class MassRangeError(ValueError):
    """Envelope inversion asked for mass out of range."""


class ConstructionError(RuntimeError):
    """A construction-level guarantee failed (e.g. power ratio bound)."""


@dataclass(frozen=True)
class PiecewiseDensity:
    """Per-(q, s) step densities on a shared breakpoint grid.

    values[q, s, i] is the density on (grid[i], grid[i+1]].
    """

    cfg: SystemConfig
    grid: np.ndarray  # (n+1,)
    values: np.ndarray  # (Q+1, S_max+1, n)

    def __post_init__(self):
        self.grid.setflags(write=False)
        self.values.setflags(write=False)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.grid)

    def rate_integrals(self) -> np.ndarray:
        """Mass per (q, s)."""
        return self.values @ self.widths

    def refine(self, edges) -> "PiecewiseDensity":
        merged = np.unique(np.concatenate([self.grid, np.asarray(edges, float)]))
        merged = merged[(merged >= self.grid[0]) & (merged <= self.grid[-1])]
        mids = 0.5 * (merged[:-1] + merged[1:])
        src = np.clip(np.searchsorted(self.grid, mids, side="right") - 1, 0,
                      len(self.grid) - 2)
        return PiecewiseDensity(self.cfg, merged, self.values[:, :, src].copy())

    def delay_power(self) -> tuple[float, float]:
        """Exact (average delay, average power) of the density."""
        masses = self.rate_integrals()
        abar = mean_arrival_rate(self.cfg.arrival)
        qs = np.arange(self.cfg.Q + 1, dtype=float)
        delay = float(qs @ masses.sum(axis=1)) / abar if abar > 0 else 0.0
        inv_int = np.log(self.grid[1:] / self.grid[:-1])
        xi = np.asarray(self.cfg.xi_table)
        power = float(np.einsum("qsi,s,i->", self.values, xi, inv_int))
        return delay, power


def density_from_measure(m: OccupancyMeasure) -> PiecewiseDensity:
    """Spread each bin's mass over the bin, proportional to the channel
    density (uniform spreading when the channel is uniform)."""
    cfg, disc = m.cfg, m.disc
    ch_edges, ch_values = cfg.channel.pieces()
    grid = np.unique(np.concatenate([np.asarray(disc.edges), np.asarray(ch_edges)]))
    mids = 0.5 * (grid[:-1] + grid[1:])
    piece_of = np.clip(
        np.searchsorted(np.asarray(ch_edges), mids, side="left") - 1,
        0, len(ch_values) - 1)
    f_vals = np.asarray(ch_values)[piece_of]
    bin_of = np.clip(
        np.searchsorted(np.asarray(disc.edges), mids, side="left") - 1,
        0, disc.bins - 1)
    p = np.asarray(disc.masses)
    scale = f_vals / p[bin_of]  # density per unit of bin mass
    values = m.values[:, :, bin_of] * scale[None, None, :]
    return PiecewiseDensity(cfg, grid, values)


@dataclass(frozen=True)
class CdfEnvelope:
    """Cumulative mass of one queue state's total density.

    Piecewise linear: us[i] is the mass below xs[i]; us[0] = 0.
    """

    q: int
    xs: np.ndarray
    us: np.ndarray

    def __post_init__(self):
        self.xs.setflags(write=False)
        self.us.setflags(write=False)

    def value(self, x: float) -> float:
        i = int(np.clip(np.searchsorted(self.xs, x, side="right") - 1,
                        0, len(self.xs) - 2))
        span = self.xs[i + 1] - self.xs[i]
        if span <= 0.0:
            return float(self.us[i])
        t = (x - self.xs[i]) / span
        return float(self.us[i] + t * (self.us[i + 1] - self.us[i]))


def compute_envelope(d: PiecewiseDensity, q: int) -> CdfEnvelope:
    total = d.values[q].sum(axis=0)
    us = np.concatenate([[0.0], np.cumsum(total * d.widths)])
    return CdfEnvelope(q, d.grid.copy(), us)


def invert_envelope(env: CdfEnvelope, v: float) -> float:
    """Leftmost x with envelope(x) >= v - 1e-12.

    Flat stretches resolve to their left endpoint.  Raises
    MassRangeError for v outside [0, total mass] beyond tolerance.
    """
    if v < -PARTITION_TOL or v > env.us[-1] + PARTITION_TOL:
        raise MassRangeError(
            f"mass out of range: {v!r} not in [0, {env.us[-1]!r}]")
    vv = min(max(v, 0.0), float(env.us[-1]))
    i = int(np.searchsorted(env.us, vv, side="left"))
    if i == 0:
        return float(env.xs[0])
    rise = env.us[i] - env.us[i - 1]
    if rise <= 0.0:
        return float(env.xs[i])
    t = (vv - env.us[i - 1]) / rise
    return float(env.xs[i - 1] + t * (env.xs[i] - env.xs[i - 1]))


def _cell_edges(cfg: SystemConfig, cells: int) -> np.ndarray:
    lo, hi = cfg.channel.h_min, cfg.channel.h_max
    edges = lo + np.arange(cells + 1) * ((hi - lo) / cells)
    edges[0], edges[-1] = lo, hi
    return edges


def _rate_sequence(s_max: int, order: str) -> list[int]:
    if order == "rate_descending":
        return list(range(s_max, -1, -1))
    if order == "rate_ascending":
        return list(range(s_max + 1))
    raise ValueError(f"unknown order {order!r}")


@dataclass(frozen=True)
class ConstructedSolution:
    """Threshold form of a density: per (q, cell, s) a gain interval.

    For fixed q the nonempty intervals partition (h_min, h_max]; on the
    interval of rate s the solution carries the state's total density,
    so conditioning on (q, h) leaves a single admissible rate.
    """

    source: PiecewiseDensity  # refined so cell edges are grid points
    cells: np.ndarray  # (K+1,) cell edges
    order: str
    lo: np.ndarray  # (Q+1, K, S_max+1)
    hi: np.ndarray  # (Q+1, K, S_max+1)

    def __post_init__(self):
        for a in (self.cells, self.lo, self.hi):
            a.setflags(write=False)

    @property
    def cfg(self) -> SystemConfig:
        return self.source.cfg

    def total_density(self, q: int) -> np.ndarray:
        return self.source.values[q].sum(axis=0)

    def envelope(self, q: int) -> CdfEnvelope:
        return compute_envelope(self.source, q)

    def rate_integrals(self) -> np.ndarray:
        """Realized mass per (q, s), from interval endpoints."""
        Q, S = self.cfg.Q, self.cfg.S_max
        out = np.zeros((Q + 1, S + 1))
        for q in range(Q + 1):
            env = self.envelope(q)
            for k in range(self.cells.size - 1):
                for s in range(S + 1):
                    a, b = self.lo[q, k, s], self.hi[q, k, s]
                    if b > a:
                        out[q, s] += env.value(b) - env.value(a)
        return out

    def intervals_for(self, q: int) -> list[tuple[float, float, int]]:
        """Nonempty (lo, hi, s) for state q, sorted by lo."""
        out = []
        for k in range(self.cells.size - 1):
            for s in range(self.cfg.S_max + 1):
                a, b = self.lo[q, k, s], self.hi[q, k, s]
                if b > a:
                    out.append((float(a), float(b), s))
        out.sort()
        return out

    def _inv_gain_integral(self, q: int, a: float, b: float) -> float:
        """Integral of (total density)/h over (a, b], exact."""
        grid, total = self.source.grid, self.total_density(q)
        i0 = int(np.clip(np.searchsorted(grid, a, side="right") - 1, 0,
                         len(grid) - 2))
        acc = 0.0
        for i in range(i0, len(grid) - 1):
            left = max(float(grid[i]), a)
            right = min(float(grid[i + 1]), b)
            if right <= left:
                if grid[i] >= b:
                    break
                continue
            if total[i] > 0.0:
                acc += total[i] * np.log(right / left)
        return acc

    def delay_power(self) -> tuple[float, float]:
        """Exact (average delay, average power) of the threshold rule."""
        masses = self.rate_integrals()
        abar = mean_arrival_rate(self.cfg.arrival)
        qs = np.arange(self.cfg.Q + 1, dtype=float)
        delay = float(qs @ masses.sum(axis=1)) / abar if abar > 0 else 0.0
        power = 0.0
        for q in range(self.cfg.Q + 1):
            for k in range(self.cells.size - 1):
                for s in range(self.cfg.S_max + 1):
                    a, b = self.lo[q, k, s], self.hi[q, k, s]
                    if b > a and self.cfg.xi(s) != 0.0:
                        power += self.cfg.xi(s) * self._inv_gain_integral(q, a, b)
        return delay, power


def compute_thresholds(
    d: PiecewiseDensity, cells: int, order: str = "rate_descending"
) -> ConstructedSolution:
    """Cut (h_min, h_max] into equal cells and stack each cell's rate
    masses into adjacent intervals via the envelope pseudo-inverse.

    Interior thresholds are clamped into their cell and the last
    interval is anchored at the cell's right edge, so for every q the
    intervals tile (h_min, h_max] exactly even where the density
    vanishes (any choice there is measure-irrelevant).
    """
    cfg = d.cfg
    edges = _cell_edges(cfg, cells)
    dr = d.refine(edges)
    Q, S, K = cfg.Q, cfg.S_max, cells
    seq = _rate_sequence(S, order)
    lo = np.zeros((Q + 1, K, S + 1))
    hi = np.zeros((Q + 1, K, S + 1))
    cum = np.concatenate(
        [np.zeros((Q + 1, S + 1, 1)),
         np.cumsum(dr.values * dr.widths[None, None, :], axis=2)], axis=2)
    edge_idx = np.searchsorted(dr.grid, edges)
    for q in range(Q + 1):
        env = compute_envelope(dr, q)
        for k in range(K):
            i0, i1 = edge_idx[k], edge_idx[k + 1]
            cell_lo, cell_hi = float(edges[k]), float(edges[k + 1])
            acc = float(env.us[i0])
            bound = cell_lo
            for pos, s in enumerate(seq):
                lo[q, k, s] = bound
                acc += float(cum[q, s, i1] - cum[q, s, i0])
                if pos == len(seq) - 1:
                    bound = cell_hi
                else:
                    t = invert_envelope(env, acc)
                    bound = min(max(t, cell_lo), cell_hi)
                hi[q, k, s] = bound
    return ConstructedSolution(dr, edges, order, lo, hi)


def construct_solution(
    d: PiecewiseDensity, cells: int, order: str = "rate_descending"
) -> ConstructedSolution:
    """Alias of compute_thresholds; named for the result, not the steps."""
    return compute_thresholds(d, cells, order)


# --- certification --------------------------------------------------------

@dataclass(frozen=True)
class FeasibilityReport:
    """Residuals of the constructed solution, all in absolute terms.

    channel_residual     gap between summed state densities and the
                         channel law at stratified sample gains
    balance_residual     queue balance violation (aggregated over gain)
    nonneg_residual      most negative density value, as a positive gap
    structural_residual  mass sitting on inadmissible (q, s) pairs
    rate_residual        worst per-(q, s) mass change vs the source
    delay_residual       |delay of construction - delay of source|
    delay                delay of the construction
    power                power of the construction
    """

    channel_residual: float
    balance_residual: float
    nonneg_residual: float
    structural_residual: float
    rate_residual: float
    delay_residual: float
    delay: float
    power: float

    @property
    def max_residual(self) -> float:
        return max(self.channel_residual, self.balance_residual,
                   self.nonneg_residual, self.structural_residual,
                   self.rate_residual, self.delay_residual)


def verify_feasibility(y: ConstructedSolution, samples: int = 10_000) -> FeasibilityReport:
    """Report-only residual battery; never raises on a violation."""
    cfg = y.cfg
    d = y.source
    # channel marginal at stratified sample gains, via interval lookup
    h_lo, h_hi = cfg.channel.h_min, cfg.channel.h_max
    hs = h_lo + (np.arange(samples) + 0.5) * ((h_hi - h_lo) / samples)
    ch_edges, ch_values = cfg.channel.pieces()
    f_ref = np.asarray(ch_values)[np.clip(
        np.searchsorted(np.asarray(ch_edges), hs, side="left") - 1,
        0, len(ch_values) - 1)]
    total = np.zeros(samples)
    piece_idx = np.clip(np.searchsorted(d.grid, hs, side="left") - 1,
                        0, len(d.grid) - 2)
    for q in range(cfg.Q + 1):
        iv = y.intervals_for(q)
        if not iv:
            continue
        los = np.array([a for a, _, _ in iv])
        his = np.array([b for _, b, _ in iv])
        dens_q = d.values[q].sum(axis=0)[piece_idx]
        # side="left" so a gain equal to an interval boundary counts for
        # the interval it closes, matching the (lo, hi] convention
        pos = np.clip(np.searchsorted(los, hs, side="left") - 1, 0, len(iv) - 1)
        covered = (hs > los[pos]) & (hs <= his[pos])
        covered |= np.isclose(hs, h_lo)  # left edge has measure zero
        total += np.where(covered, dens_q, 0.0)
    channel_residual = float(np.abs(total - f_ref).max())

    I = y.rate_integrals()
    alphas = cfg.arrival.alphas
    balance = 0.0
    for qn in range(cfg.Q + 1):
        inflow = 0.0
        for (q, s) in admissible_pairs(cfg):
            a = qn - (q - s)
            if 0 <= a < len(alphas):
                inflow += alphas[a] * I[q, s]
        balance = max(balance, abs(inflow - I[qn].sum()))

    nonneg = max(0.0, -float(d.values.min()))
    mask = np.ones(I.shape, dtype=bool)
    for (q, s) in admissible_pairs(cfg):
        mask[q, s] = False
    structural = float(np.abs(I[mask]).max(initial=0.0))
    rate = float(np.abs(I - d.rate_integrals()).max())
    delay_d, _ = d.delay_power()
    delay_y, power_y = y.delay_power()
    return FeasibilityReport(
        channel_residual=channel_residual,
        balance_residual=balance,
        nonneg_residual=nonneg,
        structural_residual=structural,
        rate_residual=rate,
        delay_residual=abs(delay_y - delay_d),
        delay=delay_y,
        power=power_y,
    )


@dataclass(frozen=True)
class DeterminismReport:
    exact_ok: bool
    sampled_ok: bool
    witness: tuple | None  # (q, h, s_a, s_b) on overlap

    @property
    def ok(self) -> bool:
        return self.exact_ok and self.sampled_ok


def verify_deterministic(y: ConstructedSolution, samples: int = 4096) -> DeterminismReport:
    """Exact pairwise interval arithmetic plus a stratified sample scan.

    Both routes must agree that no gain sees two positive rates for the
    same queue state; the first overlap found is returned as a witness.
    """
    witness = None
    exact_ok = True
    for q in range(y.cfg.Q + 1):
        iv = y.intervals_for(q)
        for (a1, b1, s1), (a2, b2, s2) in zip(iv[:-1], iv[1:]):
            if a2 < b1 - PARTITION_TOL:
                exact_ok = False
                if witness is None:
                    witness = (q, 0.5 * (a2 + min(b1, b2)), s1, s2)
    sampled_ok = True
    cfg = y.cfg
    h_lo, h_hi = cfg.channel.h_min, cfg.channel.h_max
    hs = h_lo + (np.arange(samples) + 0.5) * ((h_hi - h_lo) / samples)
    for q in range(cfg.Q + 1):
        iv = y.intervals_for(q)
        active = np.zeros(samples, dtype=int)
        for (a, b, s) in iv:
            inside = (hs > a + PARTITION_TOL) & (hs <= b - PARTITION_TOL)
            active += inside.astype(int)
        if (active > 1).any():
            sampled_ok = False
            if witness is None:
                i = int(np.nonzero(active > 1)[0][0])
                witness = (q, float(hs[i]), -1, -1)
    return DeterminismReport(exact_ok, sampled_ok, witness)


@dataclass(frozen=True)
class PowerRatio:
    power: float  # of the construction
    source_power: float
    ratio: float
    bound: float  # 1 + (h_max - h_min) / (cells * h_min)


def power_ratio(y: ConstructedSolution, d: PiecewiseDensity) -> PowerRatio:
    """Construction power over source power, with its a-priori bound.

    Raises ConstructionError when the ratio leaves
    [1 - 1e-10, bound + 1e-10]; a zero source power reports ratio 1.
    """
    cells = y.cells.size - 1
    ch = y.cfg.channel
    bound = 1.0 + (ch.h_max - ch.h_min) / (cells * ch.h_min)
    _, p_src = d.delay_power()
    _, p_y = y.delay_power()
    ratio = 1.0 if p_src == 0.0 else p_y / p_src
    if not (1.0 - RATIO_TOL <= ratio <= bound + RATIO_TOL):
        raise ConstructionError(
            f"power ratio {ratio!r} outside [1, {bound!r}] "
            f"(construction {p_y!r}, source {p_src!r})")
    return PowerRatio(p_y, p_src, ratio, bound)


# --- threshold policies ----------------------------------------------------

@dataclass(frozen=True)
class ThresholdPolicy:
    """Per queue state, ordered gain intervals mapping to rates.

    bounds[q] has one more entry than rates[q]; rule i sends rates[q][i]
    on (bounds[q][i], bounds[q][i+1]].  Queue states the source measure
    never visits fall back to draining, rate min(q, S_max), and are
    flagged transient.
    """

    cfg: SystemConfig
    bounds: tuple[np.ndarray, ...]
    rates: tuple[np.ndarray, ...]
    transient: np.ndarray  # (Q+1,) bool

    def __post_init__(self):
        self.transient.setflags(write=False)
        for b, r in zip(self.bounds, self.rates):
            b.setflags(write=False)
            r.setflags(write=False)

    def rate_for(self, q: int, h: float) -> int:
        b = self.bounds[q]
        i = int(np.clip(np.searchsorted(b, h, side="left") - 1, 0,
                        len(self.rates[q]) - 1))
        return int(self.rates[q][i])

    def sample_rate(self, q: int, h: float, u: float) -> int:
        """Threshold rules never randomize; u is accepted and ignored."""
        return self.rate_for(q, h)


def to_threshold_policy(y: ConstructedSolution, mass_tol: float = 1e-12) -> ThresholdPolicy:
    """Collapse a construction into lookup rules, merging neighbors that
    share a rate and dropping empty intervals."""
    cfg = y.cfg
    masses = y.rate_integrals().sum(axis=1)
    bounds_out, rates_out = [], []
    transient = np.zeros(cfg.Q + 1, dtype=bool)
    lo, hi = cfg.channel.h_min, cfg.channel.h_max
    for q in range(cfg.Q + 1):
        if masses[q] <= mass_tol:
            transient[q] = True
            bounds_out.append(np.array([lo, hi]))
            rates_out.append(np.array([min(q, cfg.S_max)], dtype=int))
            continue
        bs, rs = [lo], []
        for (a, b, s) in y.intervals_for(q):
            if rs and s == rs[-1]:
                bs[-1] = b  # merge with previous rule
            else:
                bs.append(b)
                rs.append(s)
        bs[-1] = hi
        bounds_out.append(np.asarray(bs))
        rates_out.append(np.asarray(rs, dtype=int))
    return ThresholdPolicy(cfg, tuple(bounds_out), tuple(rates_out), transient)


def threshold_policy_to_text(pol: ThresholdPolicy) -> str:
    lines = ["q,h_lo,h_hi,s,transient"]
    for q in range(pol.cfg.Q + 1):
        b, r = pol.bounds[q], pol.rates[q]
        flag = int(pol.transient[q])
        for i in range(len(r)):
            lines.append(f"{q},{b[i]:.17g},{b[i + 1]:.17g},{int(r[i])},{flag}")
    return "\n".join(lines) + "\n"


def threshold_policy_from_text(text: str, cfg: SystemConfig) -> ThresholdPolicy:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if lines[0] != "q,h_lo,h_hi,s,transient":
        raise ValueError(f"unexpected policy header: {lines[0]!r}")
    per_q: dict[int, list[tuple[float, float, int]]] = {}
    transient = np.zeros(cfg.Q + 1, dtype=bool)
    for ln in lines[1:]:
        qs, a, b, s, flag = ln.split(",")
        per_q.setdefault(int(qs), []).append((float(a), float(b), int(s)))
        transient[int(qs)] |= bool(int(flag))
    bounds_out, rates_out = [], []
    for q in range(cfg.Q + 1):
        rules = sorted(per_q.get(q, []))
        if not rules:
            transient[q] = True
            bounds_out.append(np.array([cfg.channel.h_min, cfg.channel.h_max]))
            rates_out.append(np.array([min(q, cfg.S_max)], dtype=int))
            continue
        bs = [rules[0][0]] + [b for _, b, _ in rules]
        rates_out.append(np.asarray([s for _, _, s in rules], dtype=int))
        bounds_out.append(np.asarray(bs))
    return ThresholdPolicy(cfg, tuple(bounds_out), tuple(rates_out), transient)
