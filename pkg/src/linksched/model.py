"""System model: arrivals, block-fading channel, and channel discretization.

Queues and transmission rates live on the integer grids {0..Q} and
{0..S_max}.  The channel gain is continuous on (h_min, h_max] with a
bounded density, either uniform or piecewise constant.  Discretization
splits (h_min, h_max] into equal-width bins and keeps, per bin, the
probability mass and the exact conditional mean of 1/h, so that any
schedule that is constant on bins has its average power reproduced
exactly by the discretized objective.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

PROB_TOL_ARRIVAL = 1e-12
PROB_TOL_CHANNEL = 1e-10


class ConfigError(ValueError):
    """A model invariant is violated; the message names the first one."""


class DiscretizationError(ValueError):
    """Channel discretization failed (e.g. a bin carries no mass)."""


@dataclass(frozen=True)
class ArrivalModel:
    """I.i.d. arrivals per slot: P(a = k) = alphas[k], k = 0..A."""

    alphas: tuple[float, ...]

    @property
    def max_arrivals(self) -> int:
        return len(self.alphas) - 1


@dataclass(frozen=True)
class ChannelModel:
    """Channel gain density on (h_min, h_max].

    kind "uniform" needs no table.  kind "piecewise" carries a table of
    (edge, value) pairs: value_i is the density on (edge_{i-1}, edge_i]
    with edge_0 = h_min, and the last edge must equal h_max.
    """

    h_min: float
    h_max: float
    kind: str = "uniform"
    table: tuple[tuple[float, float], ...] = ()

    def pieces(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        """Breakpoints and per-piece density values."""
        if self.kind == "uniform":
            return (self.h_min, self.h_max), (1.0 / (self.h_max - self.h_min),)
        edges = (self.h_min,) + tuple(e for e, _ in self.table)
        values = tuple(v for _, v in self.table)
        return edges, values

    def cdf(self, h: float) -> float:
        edges, values = self.pieces()
        acc = 0.0
        for lo, hi, v in zip(edges[:-1], edges[1:], values):
            if h <= lo:
                break
            acc += v * (min(h, hi) - lo)
        return acc


@dataclass(frozen=True)
class SystemConfig:
    """Full single-link system: arrivals, channel, buffer and rate grid.

    xi_table[s] is the energy per slot of rate s at unit gain; the cost
    of rate s at gain h is xi_table[s] / h.
    """

    arrival: ArrivalModel
    channel: ChannelModel
    Q: int
    S_max: int
    xi_table: tuple[float, ...]

    def xi(self, s: int) -> float:
        return self.xi_table[s]


@dataclass(frozen=True)
class ChannelDiscretization:
    """Equal-width bins of (h_min, h_max].

    edges has M+1 entries; bin k (1-based in math, 0-based here) is
    (edges[k], edges[k+1]].  masses[k] integrates the density over the
    bin and inv_means[k] is E[1/h | h in bin k].
    """

    edges: tuple[float, ...]
    masses: tuple[float, ...]
    inv_means: tuple[float, ...]

    @property
    def bins(self) -> int:
        return len(self.masses)

    def bin_of(self, h: float) -> int:
        """Index of the bin containing h; h_min itself maps to bin 0."""
        lo = 0
        hi = len(self.edges) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if h <= self.edges[mid]:
                hi = mid
            else:
                lo = mid
        return lo


def mean_arrival_rate(arr: ArrivalModel) -> float:
    """Average packets per slot, sum of k * alphas[k]."""
    return sum(k * a for k, a in enumerate(arr.alphas))


def validate_config(cfg: SystemConfig) -> None:
    """Raise ConfigError naming the first violated invariant."""
    arr, ch = cfg.arrival, cfg.channel
    if len(arr.alphas) == 0:
        raise ConfigError("arrival alphas are empty")
    if any(a < 0 for a in arr.alphas):
        raise ConfigError("negative arrival probability in alphas")
    if abs(sum(arr.alphas) - 1.0) > PROB_TOL_ARRIVAL:
        raise ConfigError(
            f"arrival alphas sum to {sum(arr.alphas)!r}, not 1")
    if ch.h_min <= 0:
        raise ConfigError("h_min <= 0")
    if ch.h_max <= ch.h_min:
        raise ConfigError("h_max <= h_min")
    if ch.kind not in ("uniform", "piecewise"):
        raise ConfigError(f"unknown channel kind '{ch.kind}'")
    if ch.kind == "piecewise":
        if not ch.table:
            raise ConfigError("piecewise channel has an empty table")
        edges, values = ch.pieces()
        if any(b <= a for a, b in zip(edges[:-1], edges[1:])):
            raise ConfigError("channel table edges not increasing")
        if abs(edges[-1] - ch.h_max) > 0:
            raise ConfigError("channel table does not end at h_max")
        if any(v < 0 for v in values):
            raise ConfigError("negative channel density")
    total = _integrate_density(ch, ch.h_min, ch.h_max)
    if abs(total - 1.0) > PROB_TOL_CHANNEL:
        raise ConfigError("channel density does not integrate to 1")
    A = arr.max_arrivals
    if cfg.S_max < A:
        raise ConfigError("S_max < A")
    if cfg.Q < A:
        raise ConfigError("Q < A")
    if len(cfg.xi_table) != cfg.S_max + 1:
        raise ConfigError("xi table length is not S_max + 1")
    if cfg.xi_table[0] < 0:
        raise ConfigError("xi(0) < 0")
    if any(b <= a for a, b in zip(cfg.xi_table[:-1], cfg.xi_table[1:])):
        raise ConfigError("xi not strictly increasing")


def _integrate_density(ch: ChannelModel, lo: float, hi: float) -> float:
    edges, values = ch.pieces()
    acc = 0.0
    for a, b, v in zip(edges[:-1], edges[1:], values):
        left, right = max(a, lo), min(b, hi)
        if right > left:
            acc += v * (right - left)
    return acc


def _integrate_inv_density(ch: ChannelModel, lo: float, hi: float) -> float:
    """Integral of f(h)/h, exact per constant piece."""
    edges, values = ch.pieces()
    acc = 0.0
    for a, b, v in zip(edges[:-1], edges[1:], values):
        left, right = max(a, lo), min(b, hi)
        if right > left and v > 0:
            acc += v * math.log(right / left)
    return acc


def discretize_channel(ch: ChannelModel, bins: int) -> ChannelDiscretization:
    """Split (h_min, h_max] into `bins` equal-width bins.

    Raises DiscretizationError if a bin carries no probability mass:
    the conditional mean of 1/h is undefined there.
    """
    if bins < 1:
        raise DiscretizationError("bins must be >= 1")
    width = (ch.h_max - ch.h_min) / bins
    edges = [ch.h_min + k * width for k in range(bins + 1)]
    edges[0], edges[-1] = ch.h_min, ch.h_max
    masses = []
    inv_means = []
    for k in range(bins):
        p = _integrate_density(ch, edges[k], edges[k + 1])
        if p <= 0.0:
            raise DiscretizationError("empty channel bin")
        masses.append(p)
        inv_means.append(_integrate_inv_density(ch, edges[k], edges[k + 1]) / p)
    return ChannelDiscretization(tuple(edges), tuple(masses), tuple(inv_means))


def channel_cdf_inverse(ch: ChannelModel, u: float) -> float:
    """Leftmost h with CDF(h) >= u, for u in [0, 1].

    Flat stretches of the CDF (zero-density pieces) resolve to their
    left endpoint, matching the bin convention h in (lo, hi].
    """
    if u < 0.0 or u > 1.0:
        raise ValueError("u outside [0, 1]")
    if ch.kind == "uniform":
        return ch.h_min + u * (ch.h_max - ch.h_min)
    edges, values = ch.pieces()
    acc = 0.0
    for a, b, v in zip(edges[:-1], edges[1:], values):
        step = v * (b - a)
        if acc + step >= u:
            if step <= 0.0:
                return a
            return min(a + (u - acc) / v, b)
        acc += step
    return ch.h_max


# --- configuration files -------------------------------------------------

_BUILTIN_CONFIGS: dict[str, dict] = {
    # Bursty source over a wide uniform fading range; the default demo.
    "paper_iv": {
        "arrival": {"alphas": [0.4, 0.3, 0.3]},
        "channel": {"kind": "uniform", "h_min": 0.5, "h_max": 10.0},
        "Q": 10,
        "S_max": 2,
        "xi_kind": "exp2minus1",
    },
    # Smallest nontrivial instance; used by the exhaustive oracle tests.
    "tiny": {
        "arrival": {"alphas": [0.5, 0.5]},
        "channel": {"kind": "uniform", "h_min": 1.0, "h_max": 2.0},
        "Q": 2,
        "S_max": 1,
        "xi_kind": "exp2minus1",
    },
}


def builtin_config_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILTIN_CONFIGS))


def config_from_dict(raw: dict) -> SystemConfig:
    """Build and validate a SystemConfig from parsed JSON.

    Errors name the offending field.
    """

    def need(d: dict, key: str, where: str):
        if key not in d:
            raise ConfigError(f"missing field '{where}{key}'")
        return d[key]

    arr_raw = need(raw, "arrival", "")
    alphas = need(arr_raw, "alphas", "arrival.")
    if not isinstance(alphas, list) or not all(
        isinstance(a, (int, float)) for a in alphas
    ):
        raise ConfigError("field 'arrival.alphas' must be a list of numbers")
    ch_raw = need(raw, "channel", "")
    kind = need(ch_raw, "kind", "channel.")
    h_min = need(ch_raw, "h_min", "channel.")
    h_max = need(ch_raw, "h_max", "channel.")
    table: tuple[tuple[float, float], ...] = ()
    if kind == "piecewise":
        t = need(ch_raw, "table", "channel.")
        try:
            table = tuple((float(e), float(v)) for e, v in t)
        except (TypeError, ValueError) as exc:
            raise ConfigError("field 'channel.table' must be (edge, value) pairs") from exc
    Q = need(raw, "Q", "")
    S_max = need(raw, "S_max", "")
    if not isinstance(Q, int) or not isinstance(S_max, int):
        raise ConfigError("fields 'Q' and 'S_max' must be integers")
    if "xi" in raw:
        xi_raw = raw["xi"]
        if not isinstance(xi_raw, list) or len(xi_raw) != S_max + 1:
            raise ConfigError("field 'xi' must be a list of length S_max + 1")
        xi = tuple(float(x) for x in xi_raw)
    elif raw.get("xi_kind") == "exp2minus1":
        xi = tuple(float(2**s - 1) for s in range(S_max + 1))
    else:
        raise ConfigError("missing field 'xi' (or xi_kind 'exp2minus1')")
    cfg = SystemConfig(
        arrival=ArrivalModel(tuple(float(a) for a in alphas)),
        channel=ChannelModel(float(h_min), float(h_max), str(kind), table),
        Q=Q,
        S_max=S_max,
        xi_table=xi,
    )
    validate_config(cfg)
    return cfg


def load_config(name_or_path: str) -> SystemConfig:
    """Resolve a builtin config name or read a JSON config file."""
    if name_or_path in _BUILTIN_CONFIGS:
        return config_from_dict(_BUILTIN_CONFIGS[name_or_path])
    with open(name_or_path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {name_or_path}: {exc}") from exc
    return config_from_dict(raw)
