"""Event-driven simulation of the set-valued infection process.

The core loop is an exponential race on the infected set: with m infected
sites the next event arrives at rate m * (delta + total infection rate); the
event picks a uniform site, heals with probability delta / (delta + rate), or
fires an arrow drawn from the kernel's alias table.  Arrows landing on
infected sites or outside the domain are no-ops, which keeps the race exact.

Windows hold explicit healing / arrow event lists inside a finite space-time
box and support active-path reachability by a single time-ordered sweep.
Everything is deterministic given (seed, replicate_index, config).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import rng as _rng
from .geometry import SeedSet, Shell, SpaceTimeBox
from .kernel import Kernel

__all__ = [
    "SimConfig",
    "Trajectory",
    "GraphicalWindow",
    "run",
    "run_coupled",
    "sample_window",
    "run_via_window",
    "reachable",
    "reverse_window",
    "default_escape_radius",
]


def default_escape_radius(kernel: Kernel, delta: float, horizon: float, seed_radius: int,
                          safety: float = 4.0) -> int:
    """Half-width of the bounding cube for unrestricted runs."""
    lam = kernel.tail_mass(0.0) - kernel.neglected_tail_mass()
    return int(math.ceil(seed_radius + horizon * (delta + lam) * safety)) + 1


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one simulation run."""

    kernel: Kernel
    delta: float
    horizon: float
    domain: SpaceTimeBox | frozenset | None = None
    escape_radius: int | None = None
    seed: int = 0
    replicate_index: int = 0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("healing rate must be nonnegative")
        if not (0 <= self.horizon < math.inf):
            raise ValueError("horizon must be finite and nonnegative")
        if isinstance(self.domain, SpaceTimeBox):
            if self.horizon > self.domain.height + 1e-12:
                raise ValueError("horizon exceeds the domain box height")
        elif isinstance(self.domain, (set, frozenset)):
            object.__setattr__(self, "domain", frozenset(tuple(p) for p in self.domain))


@dataclass
class Trajectory:
    """One realization: ordered state flips plus termination bookkeeping."""

    initial: SeedSet
    events: list  # (time, site tuple, flipped_up)
    termination: str  # "extinct" | "horizon" | "escaped"
    final_set: frozenset
    horizon: float
    extinction_time: float | None = None

    def intervals(self) -> dict:
        """Per-site infected time intervals, [start, end) pairs within [0, horizon]."""
        end_time = self.extinction_time if self.termination == "extinct" else self.horizon
        open_at: dict = {p: 0.0 for p in self.initial}
        out: dict = {p: [] for p in self.initial}
        for t, site, up in self.events:
            if up:
                open_at[site] = t
                out.setdefault(site, [])
            else:
                out.setdefault(site, []).append((open_at.pop(site), t))
        for site, start in open_at.items():
            out[site].append((start, end_time))
        return {s: iv for s, iv in out.items() if iv}


# -- kernel samplers ----------------------------------------------------------

_SAMPLERS: dict = {}


class _Sampler:
    """Vose alias table over the kernel's effective support."""

    __slots__ = ("offsets", "rates", "prob", "alias", "total", "size", "rate_of")

    def __init__(self, kernel: Kernel):
        offsets, rates = kernel.support()
        total = float(rates.sum())
        if total <= 0:
            raise ValueError("kernel has no positive rate to sample")
        n = len(offsets)
        scaled = (rates / total * n).tolist()
        prob = [0.0] * n
        alias = [0] * n
        small = [i for i, p in enumerate(scaled) if p < 1.0]
        large = [i for i, p in enumerate(scaled) if p >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            (small if scaled[g] < 1.0 else large).append(g)
        for q in (small, large):
            while q:
                i = q.pop()
                prob[i] = 1.0
                alias[i] = i
        self.offsets = offsets
        self.rates = rates
        self.prob = prob
        self.alias = alias
        self.total = total
        self.size = n
        self.rate_of = {off: float(r) for off, r in zip(offsets, rates)}


def _sampler(kernel: Kernel) -> _Sampler:
    s = _SAMPLERS.get(kernel)
    if s is None:
        s = _SAMPLERS[kernel] = _Sampler(kernel)
    return s


# -- domain bookkeeping --------------------------------------------------------


class _Domain:
    """Resolved domain: coordinate bounds plus a per-event admission test."""

    __slots__ = ("kind", "lo", "hi", "box", "sites", "positive", "tilted", "dim")

    def __init__(self, config: SimConfig, seed_set: SeedSet):
        d = seed_set.dimension
        self.dim = d
        dom = config.domain
        if dom is None:
            w = config.escape_radius
            if w is None:
                raise ValueError("unrestricted runs need an escape radius")
            self.kind = "free"
            self.lo = [-w] * d
            self.hi = [w] * d
            self.box = None
            self.sites = None
            self.positive = False
            self.tilted = False
        elif isinstance(dom, SpaceTimeBox):
            if dom.dimension != d:
                raise ValueError("domain dimension does not match the seed set")
            self.kind = "box"
            ranges = dom.bounding_ranges()
            self.lo = [r[0] for r in ranges]
            self.hi = [r[1] for r in ranges]
            self.box = dom
            self.sites = None
            self.positive = dom.positive_orthant
            self.tilted = any(v != 0.0 for v in dom.tilt)
        else:
            pts = frozenset(dom)
            if any(len(p) != d for p in pts):
                raise ValueError("domain sites do not match the seed dimension")
            self.kind = "sites"
            self.lo = [min(p[i] for p in pts) for i in range(d)]
            self.hi = [max(p[i] for p in pts) for i in range(d)]
            self.box = None
            self.sites = pts
            self.positive = False
            self.tilted = False

    def admits(self, coords, t: float) -> bool:
        if self.kind == "sites":
            return coords in self.sites
        if self.kind == "free":
            return True  # bounds handled by the caller as escape
        return self.box.contains(coords, t)

    def exit_time(self, coords) -> float:
        """Time at which a tilted domain slides past the site (inf if never)."""
        t = math.inf
        b = self.box
        for xi, wi, vi in zip(coords, b.half_widths, b.tilt):
            if vi > 0:
                t = min(t, (xi + wi) / vi)
            elif vi < 0:
                t = min(t, (xi - wi) / vi)
        return min(t, b.height)


class TranslateMonitor:
    """Incremental detection of fully infected translates of a seed set.

    Tracks, for each candidate anchor z, how many sites of seed+z are
    currently infected.  When a translate becomes full the interval during
    which it stays full is intersected with the anchor's admissible time
    intervals; any overlap marks the monitor as fired.
    """

    def __init__(self, seed_set: SeedSet, anchor_intervals: dict):
        self.seed_offsets = [tuple(p) for p in seed_set]
        self.size = len(self.seed_offsets)
        self.intervals = anchor_intervals  # anchor tuple -> ((lo, hi), ...)
        self.counts = {z: 0 for z in anchor_intervals}
        self.full_since: dict = {}
        self.fired = False
        self.fire_time = None
        # bounding box of sites that can touch any monitored translate
        if anchor_intervals:
            d = len(next(iter(anchor_intervals)))
            n = max(abs(c) for p in self.seed_offsets for c in p) if self.seed_offsets else 0
            self.lo = [min(z[i] for z in anchor_intervals) - n for i in range(d)]
            self.hi = [max(z[i] for z in anchor_intervals) + n for i in range(d)]
        else:
            self.lo = self.hi = []

    def seed_state(self, infected: Iterable, t0: float = 0.0):
        for site in infected:
            self.flip(site, t0, True)

    def flip(self, site, t: float, up: bool):
        lo = self.lo
        hi = self.hi
        for i in range(len(lo)):
            if not lo[i] <= site[i] <= hi[i]:
                return
        for a in self.seed_offsets:
            z = tuple(s - o for s, o in zip(site, a))
            c = self.counts.get(z)
            if c is None:
                continue
            if up:
                c += 1
                self.counts[z] = c
                if c == self.size:
                    self.full_since[z] = t
                    for lo, hi in self.intervals[z]:
                        if lo <= t <= hi:  # already inside an admissible window
                            self.fired = True
                            if self.fire_time is None or t < self.fire_time:
                                self.fire_time = t
                            break
            else:
                if c == self.size:
                    self._close(z, t)
                self.counts[z] = c - 1

    def _close(self, z, t_end: float):
        t0 = self.full_since.pop(z)
        for lo, hi in self.intervals[z]:
            start = max(lo, t0)
            if start <= min(hi, t_end):
                if not self.fired or start < self.fire_time:
                    self.fired = True
                    self.fire_time = start
                return

    def finish(self, t_end: float):
        for z in list(self.full_since):
            self._close(z, t_end)
        return self.fired


@dataclass
class SimSummary:
    termination: str
    final_set: frozenset
    extinction_time: float | None
    size_integral: float
    n_events: int
    first_event: tuple | None
    envelope_violated: bool
    events: list | None
    horizon: float
    monitor_fired: bool = False
    monitor_time: float | None = None
    size_integral_tail: float = 0.0  # integral over the last 10% of the horizon


def _simulate(config: SimConfig, seed_set: SeedSet, *, record: bool = False,
              monitor: TranslateMonitor | None = None,
              envelope: tuple | None = None,
              stream_labels: tuple = (),
              replicate: int | None = None) -> SimSummary:
    """Run the exponential race until extinction, horizon, or escape.

    envelope, when given, is (half_width_at_0, speed): the run stops early and
    is marked violated as soon as a site appears outside the moving cube of
    half width half_width_at_0 + t * speed.
    """
    kernel = config.kernel
    sampler = _sampler(kernel)
    dom = _Domain(config, seed_set)
    d = dom.dim
    horizon = config.horizon

    delta = config.delta
    per_site = delta + sampler.total
    p_heal = delta / per_site
    offsets = sampler.offsets
    prob = sampler.prob
    alias = sampler.alias
    nslots = sampler.size

    rep = config.replicate_index if replicate is None else replicate
    gen = _rng.stream(config.seed, *stream_labels, rep)
    blk = 128
    buf = gen.random(blk).tolist()
    bn = blk
    bi = 0

    lo = dom.lo
    hi = dom.hi

    live: list = []
    pos: dict = {}
    coords: dict = {}

    env_base = env_speed = 0.0
    env_on = envelope is not None
    if env_on:
        env_base, env_speed = envelope

    exits: list = []
    tilted = dom.tilted

    events: list | None = [] if record else None
    first_event = None
    chi = 0.0
    chi_tail = 0.0
    tail_from = 0.9 * horizon
    n_events = 0
    t = 0.0
    violated = False

    def fail(site):
        return any(abs(c) > env_base for c in site)

    # seed the state; sites outside the domain at time 0 do not count
    for site in sorted(seed_set):
        if dom.kind != "free" and not dom.admits(site, 0.0):
            continue
        if env_on and fail(site):
            violated = True
        key = site if d > 1 else site[0]
        pos[key] = len(live)
        live.append(key)
        coords[key] = site
        if tilted:
            heapq.heappush(exits, (dom.exit_time(site), key))
    if monitor is not None:
        monitor.seed_state((coords[k] for k in live), 0.0)

    termination = "horizon"
    ext_time = None

    if violated:
        final = frozenset(coords[k] for k in live)
        return SimSummary("horizon", final, None, 0.0, 0, None, True, events, horizon)

    log = math.log
    while True:
        m = len(live)
        if m == 0:
            termination = "extinct"
            ext_time = t
            break
        if bi >= bn - 5:
            blk = min(blk * 2, _rng.BLOCK)
            buf = gen.random(blk).tolist()
            bn = blk
            bi = 0
        u = buf[bi]
        bi += 1
        dt = -log(1.0 - u) / (m * per_site)
        t_next = t + dt

        if tilted and exits and exits[0][0] < min(t_next, horizon):
            # deterministic removals: the sliding box passed these sites
            t_exit, key = heapq.heappop(exits)
            t_exit = max(t_exit, t)
            chi += m * (t_exit - t)
            if t_exit > tail_from:
                chi_tail += m * (t_exit - max(t, tail_from))
            t = t_exit
            idx = pos.get(key)
            if idx is not None:
                last = live.pop()
                m -= 1
                del pos[key]
                if idx < m:
                    live[idx] = last
                    pos[last] = idx
                site = coords[key]
                if events is not None:
                    events.append((t, site, False))
                if first_event is None:
                    first_event = (t, site, False)
                if monitor is not None:
                    monitor.flip(site, t, False)
            continue

        if t_next > horizon:
            chi += m * (horizon - t)
            if horizon > tail_from:
                chi_tail += m * (horizon - max(t, tail_from))
            t = horizon
            termination = "horizon"
            break
        chi += m * dt
        if t_next > tail_from:
            chi_tail += m * (t_next - max(t, tail_from))
        t = t_next
        n_events += 1

        u = buf[bi]
        bi += 1
        idx = int(u * m)
        if idx == m:
            idx = m - 1
        key = live[idx]

        u = buf[bi]
        bi += 1
        if u < p_heal:
            last = live.pop()
            m -= 1
            del pos[key]
            if idx < m:
                live[idx] = last
                pos[last] = idx
            site = coords[key]
            if events is not None:
                events.append((t, site, False))
            if first_event is None:
                first_event = (t, site, False)
            if monitor is not None:
                monitor.flip(site, t, False)
            continue

        u = buf[bi]
        bi += 1
        slot = int(u * nslots)
        if slot == nslots:
            slot = nslots - 1
        u = buf[bi]
        bi += 1
        if u >= prob[slot]:
            slot = alias[slot]
        off = offsets[slot]
        src = coords[key]
        if d == 1:
            tx = src[0] + off[0]
            target = (tx,)
            tkey = tx
            inside = lo[0] <= tx <= hi[0]
        else:
            target = tuple(s + o for s, o in zip(src, off))
            tkey = target
            inside = all(l <= c <= h for l, c, h in zip(lo, target, hi))
        if not inside:
            if dom.kind == "free":
                termination = "escaped"
                break
            continue
        if tkey in pos:
            continue
        if dom.kind != "free" and not dom.admits(target, t):
            continue
        if env_on and fail_moving(target, t, env_base, env_speed):
            violated = True
            termination = "horizon"
            break
        pos[tkey] = len(live)
        live.append(tkey)
        coords[tkey] = target
        if tilted:
            heapq.heappush(exits, (dom.exit_time(target), tkey))
        if events is not None:
            events.append((t, target, True))
        if first_event is None:
            first_event = (t, target, True)
        if monitor is not None:
            monitor.flip(target, t, True)
            if monitor.fired:
                break  # the block event is monotone; nothing can unfire it

    final = frozenset(coords[k] for k in live)
    fired = False
    fire_t = None
    if monitor is not None:
        fired = monitor.finish(t)
        fire_t = monitor.fire_time
    return SimSummary(
        termination,
        final,
        ext_time,
        chi,
        n_events,
        first_event,
        violated,
        events,
        horizon,
        fired,
        fire_t,
        chi_tail,
    )


def fail_moving(site, t, base, speed):
    bound = base + t * speed
    return any(abs(c) > bound for c in site)


def run(config: SimConfig, seed_set: SeedSet) -> Trajectory:
    """Simulate one realization and return its full event log."""
    summary = _simulate(config, seed_set, record=True)
    return Trajectory(
        initial=seed_set,
        events=summary.events,
        termination=summary.termination,
        final_set=summary.final_set,
        horizon=config.horizon,
        extinction_time=summary.extinction_time,
    )


# -- monotone coupling ---------------------------------------------------------


def _check_coupling_preconditions(lo_cfg: SimConfig, hi_cfg: SimConfig,
                                  seed_lo: SeedSet, seed_hi: SeedSet):
    if not set(seed_lo.offsets) <= set(seed_hi.offsets):
        raise ValueError("lower seed set must be contained in the upper one")
    if hi_cfg.delta > lo_cfg.delta:
        raise ValueError("coupling needs delta_hi <= delta_lo")
    if (lo_cfg.seed, lo_cfg.replicate_index) != (hi_cfg.seed, hi_cfg.replicate_index):
        raise ValueError("coupled runs must share the same seed and replicate index")
    if (lo_cfg.horizon, lo_cfg.domain, lo_cfg.escape_radius) != (
        hi_cfg.horizon,
        hi_cfg.domain,
        hi_cfg.escape_radius,
    ):
        raise ValueError("coupled runs must share horizon and domain")
    hi_s = _sampler(hi_cfg.kernel)
    lo_rates = dict(zip(*lo_cfg.kernel.support()))
    for off, r in lo_rates.items():
        if r > hi_s.rate_of.get(off, 0.0) + 1e-12:
            raise ValueError("kernels are not pointwise ordered")


def run_coupled(lo_cfg: SimConfig, hi_cfg: SimConfig, seed_lo: SeedSet,
                seed_hi: SeedSet) -> tuple[Trajectory, Trajectory]:
    """Jointly simulate an ordered pair of processes sharing base events.

    Shared healing events (rate delta_hi) act on both processes, surplus
    healing (delta_lo - delta_hi) on the lower one only; shared arrows (lower
    kernel rate) act on both, surplus arrows on the upper one only.  The lower
    state is contained in the upper state at every instant, surely.
    """
    summary = _coupled_summary(lo_cfg, hi_cfg, seed_lo, seed_hi, record=True)
    (ev_lo, term_lo, fin_lo, ext_lo), (ev_hi, term_hi, fin_hi, ext_hi), _ = summary
    t_lo = Trajectory(seed_lo, ev_lo, term_lo, fin_lo, lo_cfg.horizon, ext_lo)
    t_hi = Trajectory(seed_hi, ev_hi, term_hi, fin_hi, hi_cfg.horizon, ext_hi)
    return t_lo, t_hi


def _coupled_summary(lo_cfg, hi_cfg, seed_lo, seed_hi, record=False,
                     stream_labels: tuple = ()):
    """Returns ((events, termination, final, ext_t) x2, containment_violations)."""
    _check_coupling_preconditions(lo_cfg, hi_cfg, seed_lo, seed_hi)
    hi_sampler = _sampler(hi_cfg.kernel)
    dom = _Domain(hi_cfg, seed_hi)
    if dom.tilted:
        raise ValueError("coupled runs support static domains only")
    d = dom.dim
    horizon = hi_cfg.horizon

    lo_rate_of = dict(zip(*lo_cfg.kernel.support()))
    share = [
        min(1.0, lo_rate_of.get(off, 0.0) / r) if r > 0 else 0.0
        for off, r in zip(hi_sampler.offsets, hi_sampler.rates)
    ]

    delta_hi = hi_cfg.delta
    delta_lo = lo_cfg.delta
    per_site = delta_lo + hi_sampler.total
    p_heal_both = delta_hi / per_site
    p_heal_lo = delta_lo / per_site  # cumulative: (delta_hi, delta_lo] is surplus

    gen = _rng.stream(hi_cfg.seed, *stream_labels, hi_cfg.replicate_index)
    blk = 256
    buf = gen.random(blk).tolist()
    bn = blk
    bi = 0

    lo_b, hi_b = dom.lo, dom.hi
    live: list = []
    pos: dict = {}
    coords: dict = {}
    in_lo: set = set()

    for site in sorted(seed_hi):
        if dom.kind != "free" and not dom.admits(site, 0.0):
            continue
        key = site if d > 1 else site[0]
        pos[key] = len(live)
        live.append(key)
        coords[key] = site
    for site in sorted(seed_lo):
        key = site if d > 1 else site[0]
        if key in pos:
            in_lo.add(key)

    ev_lo: list = [] if record else None
    ev_hi: list = [] if record else None
    violations = 0
    t = 0.0
    term = "horizon"
    ext_lo = ext_hi = None
    lo_alive = len(in_lo) > 0
    log = math.log
    offsets = hi_sampler.offsets
    prob = hi_sampler.prob
    alias = hi_sampler.alias
    nslots = hi_sampler.size

    while True:
        m = len(live)
        if m == 0:
            term = "extinct"
            ext_hi = t
            if lo_alive:
                violations += 1  # cannot happen: lower set outlived upper set
            break
        if bi >= bn - 6:
            blk = min(blk * 2, _rng.BLOCK)
            buf = gen.random(blk).tolist()
            bn = blk
            bi = 0
        u = buf[bi]
        bi += 1
        t_next = t - log(1.0 - u) / (m * per_site)
        if t_next > horizon:
            t = horizon
            break
        t = t_next

        u = buf[bi]
        bi += 1
        idx = int(u * m)
        if idx == m:
            idx = m - 1
        key = live[idx]

        u = buf[bi]
        bi += 1
        if u < p_heal_lo:
            heal_both = u < p_heal_both
            if heal_both:
                last = live.pop()
                m -= 1
                del pos[key]
                if idx < m:
                    live[idx] = last
                    pos[last] = idx
                site = coords[key]
                if ev_hi is not None:
                    ev_hi.append((t, site, False))
                if key in in_lo:
                    in_lo.discard(key)
                    if ev_lo is not None:
                        ev_lo.append((t, site, False))
            else:
                if key in in_lo:
                    in_lo.discard(key)
                    if ev_lo is not None:
                        ev_lo.append((t, coords[key], False))
            if lo_alive and not in_lo:
                lo_alive = False
                ext_lo = t
            continue

        u = buf[bi]
        bi += 1
        slot = int(u * nslots)
        if slot == nslots:
            slot = nslots - 1
        u = buf[bi]
        bi += 1
        if u >= prob[slot]:
            slot = alias[slot]
        off = offsets[slot]
        u = buf[bi]
        bi += 1
        is_shared = u < share[slot]

        src = coords[key]
        if d == 1:
            tx = src[0] + off[0]
            target = (tx,)
            tkey = tx
            inside = lo_b[0] <= tx <= hi_b[0]
        else:
            target = tuple(s + o for s, o in zip(src, off))
            tkey = target
            inside = all(l <= c <= h for l, c, h in zip(lo_b, target, hi_b))
        if not inside:
            if dom.kind == "free":
                term = "escaped"
                break
            continue
        if dom.kind != "free" and not dom.admits(target, t):
            continue

        if tkey not in pos:
            pos[tkey] = len(live)
            live.append(tkey)
            coords[tkey] = target
            if ev_hi is not None:
                ev_hi.append((t, target, True))
        if is_shared and key in in_lo and tkey not in in_lo:
            if tkey not in pos:
                violations += 1
            in_lo.add(tkey)
            if ev_lo is not None:
                ev_lo.append((t, target, True))

    final_hi = frozenset(coords[k] for k in live)
    final_lo = frozenset(coords[k] for k in in_lo)
    if not final_lo <= final_hi:
        violations += 1
    term_lo = term
    if term != "escaped":
        if not lo_alive:
            term_lo = "extinct"
        if not live:
            term = "extinct"
    return (
        (ev_lo, term_lo, final_lo, ext_lo),
        (ev_hi, term, final_hi, ext_hi),
        violations,
    )


# -- graphical windows ---------------------------------------------------------


@dataclass
class GraphicalWindow:
    """Explicit Poisson event lists inside a finite axis-aligned space-time box."""

    box: SpaceTimeBox
    shells: tuple
    sites: list  # box sites first, then shell sites
    n_box: int
    times: np.ndarray
    kinds: np.ndarray  # 0 = healing, 1 = arrow
    src: np.ndarray  # site index, -1 for healing events' unused slot
    dst: np.ndarray
    heal_site: np.ndarray
    seed_info: tuple = ()

    _index: dict = field(default=None, repr=False)

    def site_index(self, site) -> int:
        if self._index is None:
            self._index = {s: i for i, s in enumerate(self.sites)}
        return self._index[tuple(site)]

    def healing_times(self, site) -> np.ndarray:
        i = self.site_index(site)
        mask = (self.kinds == 0) & (self.heal_site == i)
        return self.times[mask]

    def arrow_times(self, src, dst) -> np.ndarray:
        i, j = self.site_index(src), self.site_index(dst)
        mask = (self.kinds == 1) & (self.src == i) & (self.dst == j)
        return self.times[mask]

    @property
    def n_events(self) -> int:
        return len(self.times)


def _window_pairs(kernel: Kernel, box_sites, all_sites, index):
    """Ordered (src_idx, dst_idx, rate) triples for arrows inside the window."""
    offsets, rates = kernel.support()
    pairs_src = []
    pairs_dst = []
    pairs_rate = []
    for i, s in enumerate(box_sites):
        for off, r in zip(offsets, rates):
            tgt = tuple(a + b for a, b in zip(s, off))
            j = index.get(tgt)
            if j is not None:
                pairs_src.append(i)
                pairs_dst.append(j)
                pairs_rate.append(r)
    return (
        np.array(pairs_src, dtype=np.int64),
        np.array(pairs_dst, dtype=np.int64),
        np.array(pairs_rate, dtype=np.float64),
    )


_PAIR_CACHE: dict = {}


def sample_window(kernel: Kernel, delta: float, window_box: SpaceTimeBox,
                  shells: Iterable[Shell] = (), seed: int = 0,
                  stream_labels: tuple = ()) -> GraphicalWindow:
    """Independent Poisson event lists for one window.

    Healing events: per box site, rate delta over [0, T].  Arrows: per ordered
    (source in box, target in box or a shell) pair at the kernel rate.
    """
    if any(v != 0.0 for v in window_box.tilt):
        raise ValueError("windows require an axis-aligned box")
    shells = tuple(shells)
    T = window_box.height
    cache_key = (kernel, window_box, shells)
    cached = _PAIR_CACHE.get(cache_key)
    if cached is None:
        box_sites = sorted(window_box.sites_at(0.0))
        shell_sites = []
        seen = set(box_sites)
        for sh in shells:
            for s in sorted(sh.outer.sites_at(0.0)):
                if s not in seen and sh.membership(s, 0.0):
                    seen.add(s)
                    shell_sites.append(s)
        sites = box_sites + shell_sites
        index = {s: i for i, s in enumerate(sites)}
        pairs = _window_pairs(kernel, box_sites, sites, index)
        cached = (sites, len(box_sites), pairs)
        _PAIR_CACHE[cache_key] = cached
    sites, n_box, (p_src, p_dst, p_rate) = cached

    gen = _rng.stream(seed, "window", *stream_labels)
    heal_counts = gen.poisson(delta * T, size=n_box) if delta > 0 and T > 0 else np.zeros(n_box, dtype=np.int64)
    total_heal = int(heal_counts.sum())
    heal_t = gen.random(total_heal) * T
    heal_site = np.repeat(np.arange(n_box), heal_counts)
    arrow_counts = (gen.poisson(p_rate * T) if T > 0 else np.zeros(len(p_rate), dtype=np.int64)) if len(p_rate) else np.zeros(0, dtype=np.int64)
    total_arrow = int(arrow_counts.sum()) if len(p_rate) else 0
    arrow_t = gen.random(total_arrow) * T
    a_src = np.repeat(p_src, arrow_counts) if len(p_rate) else np.zeros(0, dtype=np.int64)
    a_dst = np.repeat(p_dst, arrow_counts) if len(p_rate) else np.zeros(0, dtype=np.int64)

    times = np.concatenate([heal_t, arrow_t])
    kinds = np.concatenate(
        [np.zeros(total_heal, dtype=np.int8), np.ones(total_arrow, dtype=np.int8)]
    )
    src = np.concatenate([np.full(total_heal, -1, dtype=np.int64), a_src])
    dst = np.concatenate([np.full(total_heal, -1, dtype=np.int64), a_dst])
    hsite = np.concatenate([heal_site, np.full(total_arrow, -1, dtype=np.int64)])
    order = np.lexsort((dst, src, hsite, kinds, times))
    return GraphicalWindow(
        box=window_box,
        shells=shells,
        sites=sites,
        n_box=n_box,
        times=times[order],
        kinds=kinds[order],
        src=src[order],
        dst=dst[order],
        heal_site=hsite[order],
        seed_info=(seed, *stream_labels),
    )


def run_via_window(window: GraphicalWindow, seed_set: SeedSet) -> Trajectory:
    """The process restricted to the window's box, by a time-ordered sweep."""
    box_index = {s: i for i, s in enumerate(window.sites[: window.n_box])}
    infected = set()
    for p in seed_set:
        i = box_index.get(tuple(p))
        if i is not None:
            infected.add(i)
    events = []
    ext_time = None
    times = window.times
    kinds = window.kinds
    src = window.src
    dst = window.dst
    hsite = window.heal_site
    n_box = window.n_box
    sites = window.sites
    for k in range(len(times)):
        if not infected:
            ext_time = ext_time if ext_time is not None else (times[k - 1] if k else 0.0)
            break
        t = times[k]
        if kinds[k] == 0:
            i = hsite[k]
            if i in infected:
                infected.discard(i)
                events.append((float(t), sites[i], False))
                if not infected:
                    ext_time = float(t)
        else:
            i, j = src[k], dst[k]
            if i in infected and j < n_box and j not in infected:
                infected.add(j)
                events.append((float(t), sites[j], True))
    final = frozenset(sites[int(i)] for i in infected)
    termination = "extinct" if not final else "horizon"
    if not final and ext_time is None:
        ext_time = 0.0
    return Trajectory(
        initial=seed_set,
        events=events,
        termination=termination,
        final_set=final,
        horizon=window.box.height,
        extinction_time=ext_time if not final else None,
    )


def reachable(window: GraphicalWindow, sources, targets) -> bool:
    """Is some target connected to some source by an active path in the window?

    Sources and targets are (site, time) pairs with source times not after
    target times.  The sweep maintains the reached site set: healing events
    remove a site, arrows from a reached site add their target, and sources
    activate at their own times.
    """
    idx = {tuple(s): i for i, s in enumerate(window.sites)}
    src_list = sorted((float(t), idx[tuple(x)]) for x, t in sources)
    tgt_list = sorted((float(t), idx[tuple(x)]) for x, t in targets)
    reached: set = set()
    si = ti = ei = 0
    times = window.times
    kinds = window.kinds
    src = window.src
    dst = window.dst
    hsite = window.heal_site
    n = len(times)
    inf = math.inf

    # tie order at equal times: activate sources, apply events, then test targets
    while ti < len(tgt_list):
        t_s = src_list[si][0] if si < len(src_list) else inf
        t_e = times[ei] if ei < n else inf
        t_t = tgt_list[ti][0]
        if t_s <= t_e and t_s <= t_t:
            reached.add(src_list[si][1])
            si += 1
        elif t_e <= t_t:
            if kinds[ei] == 0:
                reached.discard(int(hsite[ei]))
            elif int(src[ei]) in reached:
                reached.add(int(dst[ei]))
            ei += 1
        else:
            if tgt_list[ti][1] in reached:
                return True
            ti += 1
    return False


def reverse_window(window: GraphicalWindow) -> GraphicalWindow:
    """Time-reflected window: t -> T - t, every arrow direction swapped."""
    T = window.box.height
    times = T - window.times
    order = np.lexsort((window.src, window.dst, window.heal_site, window.kinds, times))
    return GraphicalWindow(
        box=window.box,
        shells=window.shells,
        sites=window.sites,
        n_box=window.n_box,
        times=times[order],
        kinds=window.kinds[order],
        src=window.dst[order],
        dst=window.src[order],
        heal_site=window.heal_site[order],
        seed_info=window.seed_info + ("reversed",),
    )
