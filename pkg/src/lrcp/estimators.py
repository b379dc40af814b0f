"""Monte Carlo and deterministic functionals of the infection process.

Bernoulli functionals get Wilson 95% intervals; real-valued functionals get
nonparametric bootstrap percentile intervals.  Replicates are scheduled in
fixed-size chunks across an optional worker pool; every replicate draws from
its own derived stream, so results are identical for any worker count.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as _rng
from .engine import (
    SimConfig,
    Trajectory,
    _coupled_summary,
    _simulate,
    default_escape_radius,
    run_via_window,
    sample_window,
)
from .geometry import SeedSet, Shell, SpaceTimeBox, box, separated
from .kernel import Kernel

__all__ = [
    "Estimate",
    "InfectedRegion",
    "DeltaCProtocol",
    "DeltaCBracket",
    "estimate_survival",
    "estimate_delta_c",
    "estimate_susceptibility",
    "estimate_upper_density",
    "infected_region",
    "expected_arrows",
    "sample_shell_arrows",
    "max_separated",
    "check_extinction_bound",
    "extinction_tail",
    "growth_envelope",
    "find_growth_speed",
    "coupling_violations",
    "wilson_interval",
    "EscapeValidationError",
]

ESCAPE_RATE_LIMIT = 1e-3
CHUNK = 256
Z95 = 1.959963984540054


class EscapeValidationError(RuntimeError):
    """Too many replicates escaped the finite window; enlarge the escape box."""


def wilson_interval(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == n else min(1.0, center + half)
    return lo, hi


def bootstrap_interval(values: np.ndarray, gen: np.random.Generator,
                       n_resamples: int = 1000) -> tuple[float, float]:
    if len(values) == 0:
        return math.nan, math.nan
    idx = gen.integers(0, len(values), size=(n_resamples, len(values)))
    means = values[idx].mean(axis=1)
    return float(np.percentile(means, 2.5)), float(np.percentile(means, 97.5))


@dataclass(frozen=True)
class Estimate:
    """Point value with confidence interval and sampling provenance."""

    value: float
    ci_low: float
    ci_high: float
    n_samples: int
    n_escaped: int = 0
    seed_info: tuple = ()
    flags: tuple = ()

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_samples": self.n_samples,
            "n_escaped": self.n_escaped,
            "seed_info": list(self.seed_info),
            "flags": list(self.flags),
        }


# -- replicate scheduling ------------------------------------------------------


def _pmap(worker, payload, n: int, workers: int = 1) -> list:
    """Run worker(payload, start, stop) over chunked replicate ranges.

    Chunk boundaries are fixed, results are concatenated in index order, and
    every replicate derives its own stream, so the output is independent of
    the worker count and of scheduling.
    """
    chunks = [(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]
    if workers <= 1 or len(chunks) <= 1:
        parts = [worker(payload, a, b) for a, b in chunks]
    else:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(min(workers, len(chunks))) as pool:
            parts = pool.starmap(
                worker, [(payload, a, b) for a, b in chunks], chunksize=1
            )
    return [x for part in parts for x in part]


def _with_escape(config: SimConfig, seed_set: SeedSet) -> SimConfig:
    if config.domain is None and config.escape_radius is None:
        r = default_escape_radius(
            config.kernel, config.delta, config.horizon, seed_set.radius
        )
        return replace(config, escape_radius=r)
    return config


def _survival_worker(payload, start, stop):
    config, seed_set, labels = payload
    out = []
    for r in range(start, stop):
        s = _simulate(config, seed_set, stream_labels=labels, replicate=r)
        out.append((s.termination != "extinct", s.termination == "escaped"))
    return out


def _check_escapes(n_escaped: int, n: int):
    if n > 0 and n_escaped / n > ESCAPE_RATE_LIMIT:
        raise EscapeValidationError(
            f"{n_escaped}/{n} replicates escaped the finite window "
            f"(limit {ESCAPE_RATE_LIMIT:.1%}); enlarge escape_radius"
        )


def estimate_survival(config: SimConfig, seed_set: SeedSet, n: int,
                      workers: int = 1, labels: tuple = ("survival",)) -> Estimate:
    """Probability of staying alive up to the horizon (upper proxy for survival).

    Escaped replicates are counted as alive (they outgrew the window) and
    reported; the run fails validation if their rate exceeds 0.1%.
    """
    config = _with_escape(config, seed_set)
    rows = _pmap(_survival_worker, (config, seed_set, labels), n, workers)
    alive = sum(a for a, _ in rows)
    escaped = sum(e for _, e in rows)
    _check_escapes(escaped, n)
    lo, hi = wilson_interval(alive, n)
    return Estimate(
        value=alive / n,
        ci_low=lo,
        ci_high=hi,
        n_samples=n,
        n_escaped=escaped,
        seed_info=(config.seed, *labels),
    )


# -- critical value bisection ---------------------------------------------------


@dataclass(frozen=True)
class DeltaCProtocol:
    """Bisection settings for locating the survival threshold in delta.

    With horizon_rate_scaled (the default) the horizon is measured in units
    of 1 / total infection rate, so rescaling the kernel rescales the probe
    window with it and the bracket transforms exactly like the threshold.
    """

    horizon: float = 80.0
    n_per_probe: int = 600
    survival_threshold: float = 0.02
    max_iters: int = 12
    rel_tolerance: float = 0.02
    retry_factor: int = 4
    horizon_rate_scaled: bool = True
    seed: int = 0
    workers: int = 1


@dataclass
class DeltaCBracket:
    lo: float
    hi: float
    flags: tuple
    probes: list = field(default_factory=list)  # (delta, Estimate)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)


def _classify(est: Estimate, tau: float) -> str:
    if est.ci_low > tau:
        return "above"
    if est.ci_high < tau:
        return "below"
    return "unclear"


def estimate_delta_c(kernel: Kernel, protocol: DeltaCProtocol = DeltaCProtocol(),
                     seed_set: SeedSet | None = None) -> DeltaCBracket:
    """Bisection bracket for the healing rate at which survival drops below
    the protocol threshold.  The initial bracket is (0, total rate]: above the
    total infection rate the process is dominated by a subcritical branching
    process and dies out.
    """
    if seed_set is None:
        seed_set = SeedSet.origin(kernel.dimension)
    lam = kernel.total_rate()
    tau = protocol.survival_threshold
    horizon = protocol.horizon / lam if protocol.horizon_rate_scaled else protocol.horizon
    probes: list = []
    flags: list = []

    def probe(delta: float, tag: int) -> str:
        cfg = SimConfig(
            kernel=kernel, delta=delta, horizon=horizon,
            escape_radius=None, domain=None, seed=protocol.seed,
        )
        est = estimate_survival(
            cfg, seed_set, protocol.n_per_probe, protocol.workers,
            labels=("delta-c", tag),
        )
        verdict = _classify(est, tau)
        if verdict == "unclear" and protocol.retry_factor > 1:
            est = estimate_survival(
                cfg, seed_set, protocol.n_per_probe * protocol.retry_factor,
                protocol.workers, labels=("delta-c-retry", tag),
            )
            verdict = _classify(est, tau)
        probes.append((delta, est))
        return verdict

    hi = lam
    if probe(hi, 0) == "above":
        flags.append("upper-endpoint-survives")
        return DeltaCBracket(0.0, hi, tuple(flags), probes)
    lo = 0.0  # survival is 1 at delta = 0
    for it in range(1, protocol.max_iters + 1):
        if hi - lo <= protocol.rel_tolerance * hi:
            break
        mid = 0.5 * (lo + hi)
        verdict = probe(mid, it)
        if verdict == "above":
            lo = mid
        elif verdict == "below":
            hi = mid
        else:
            flags.append("widened")
            break
    return DeltaCBracket(lo, hi, tuple(flags), probes)


# -- susceptibility --------------------------------------------------------------


def _chi_worker(payload, start, stop):
    config, seed_set, labels = payload
    out = []
    for r in range(start, stop):
        s = _simulate(config, seed_set, stream_labels=labels, replicate=r)
        out.append((s.size_integral, s.size_integral_tail, s.termination == "escaped"))
    return out


def estimate_susceptibility(config: SimConfig, seed_set: SeedSet, n: int,
                            workers: int = 1, labels: tuple = ("chi",)) -> Estimate:
    """Mean integral of the infected-set size up to the horizon.

    Flagged "divergence-suspected" when the last 10% of the horizon carries
    more than 5% of the accumulated integral.
    """
    config = _with_escape(config, seed_set)
    rows = _pmap(_chi_worker, (config, seed_set, labels), n, workers)
    chis = np.array([c for c, _, _ in rows])
    tails = np.array([c for _, c, _ in rows])
    escaped = sum(e for _, _, e in rows)
    gen = _rng.stream(config.seed, *labels, "bootstrap")
    lo, hi = bootstrap_interval(chis, gen)
    flags = []
    total = float(chis.sum())
    if total > 0 and float(tails.sum()) / total > 0.05:
        flags.append("divergence-suspected")
    return Estimate(
        value=float(chis.mean()),
        ci_low=lo,
        ci_high=hi,
        n_samples=n,
        n_escaped=escaped,
        seed_info=(config.seed, *labels),
        flags=tuple(flags),
    )


# -- upper invariant measure density ---------------------------------------------


def _density_worker(payload, start, stop):
    kernel, delta, window_box, seed, labels = payload
    full = SeedSet(frozenset(window_box.sites_at(0.0)))
    origin = (0,) * kernel.dimension
    out = []
    for r in range(start, stop):
        w = sample_window(kernel, delta, window_box, (), seed, (*labels, r))
        traj = run_via_window(w, full)
        out.append(origin in traj.final_set)
    return out


def estimate_upper_density(kernel: Kernel, delta: float, half_width: float,
                           height: float, n: int, seed: int = 0,
                           workers: int = 1, labels: tuple = ("density",)) -> Estimate:
    """Chance that the origin is reached at the top of a window started full.

    This is the finite-window approximation to the upper invariant measure's
    one-site marginal, computed by backward reachability (equivalently, the
    window-restricted process started from every site of the box).
    """
    b = box(half_width, height, dimension=kernel.dimension)
    rows = _pmap(_density_worker, (kernel, delta, b, seed, labels), n, workers)
    hits = sum(rows)
    lo, hi = wilson_interval(hits, n)
    return Estimate(hits / n, lo, hi, n, 0, (seed, *labels))


# -- infected regions and arrow functionals ---------------------------------------


@dataclass
class InfectedRegion:
    """Per-site infected intervals of one run, clipped to a space-time box."""

    box: SpaceTimeBox
    intervals: dict  # site -> tuple of (start, end)

    @property
    def occupation(self) -> dict:
        return {s: sum(e - a for a, e in iv) for s, iv in self.intervals.items()}

    def total_occupation(self) -> float:
        return sum(self.occupation.values())


def infected_region(traj: Trajectory, clip_box: SpaceTimeBox) -> InfectedRegion:
    from .geometry import _box_interval

    clipped: dict = {}
    for site, ivs in traj.intervals().items():
        window = _box_interval(clip_box, site)
        if window is None:
            continue
        wlo, whi = window
        keep = [(max(a, wlo), min(b, whi)) for a, b in ivs if max(a, wlo) < min(b, whi)]
        if keep:
            clipped[site] = tuple(keep)
    return InfectedRegion(box=clip_box, intervals=clipped)


def _shell_is_unbounded(shell: Shell) -> bool:
    return any(math.isinf(w) for w in shell.widths)


def _overlap(ivs_a, ivs_b) -> float:
    total = 0.0
    for a0, a1 in ivs_a:
        for b0, b1 in ivs_b:
            lo, hi = max(a0, b0), min(a1, b1)
            if hi > lo:
                total += hi - lo
    return total


def expected_arrows(region: InfectedRegion, kernel: Kernel, shell: Shell) -> float:
    """Mean number of infection arrows from the region into the shell.

    Deterministic functional: sum over occupied sites and kernel offsets of
    rate times the time the target sits in the shell while the source is
    infected.  With unbounded shell widths the complement of the inner box is
    used and the full analytic tail of the kernel contributes.
    """
    if shell.inner != region.box:
        raise ValueError("shell inner box must match the region box")
    offsets, rates = kernel.support()
    if _shell_is_unbounded(shell):
        from .geometry import _box_interval

        total_rate = kernel.total_rate()
        acc = 0.0
        for site, ivs in region.intervals.items():
            occ = sum(e - a for a, e in ivs)
            acc += occ * total_rate
            for off, r in zip(offsets, rates):
                tgt = tuple(a + b for a, b in zip(site, off))
                inside = _box_interval(shell.inner, tgt)
                if inside is not None:
                    acc -= r * _overlap(ivs, [inside])
        return acc
    acc = 0.0
    for site, ivs in region.intervals.items():
        for off, r in zip(offsets, rates):
            tgt = tuple(a + b for a, b in zip(site, off))
            pieces = shell.membership_intervals(tgt)
            if pieces:
                acc += r * _overlap(ivs, pieces)
    return acc


def sample_shell_arrows(region: InfectedRegion, kernel: Kernel, shell: Shell,
                        seed: int = 0, labels: tuple = ("arrows",)) -> list:
    """Poisson draw of arrow endpoints (site, time) given the infected region."""
    if shell.inner != region.box:
        raise ValueError("shell inner box must match the region box")
    from .geometry import _box_interval

    gen = _rng.stream(seed, *labels)
    offsets, rates = kernel.support()
    unbounded = _shell_is_unbounded(shell)
    out = []
    for site in sorted(region.intervals):
        ivs = region.intervals[site]
        for off, r in zip(offsets, rates):
            tgt = tuple(a + b for a, b in zip(site, off))
            if unbounded:
                inside = _box_interval(shell.inner, tgt)
                pieces = _complement(ivs, inside)
            else:
                shell_ivs = shell.membership_intervals(tgt)
                pieces = [
                    (max(a0, b0), min(a1, b1))
                    for a0, a1 in ivs
                    for b0, b1 in shell_ivs
                    if max(a0, b0) < min(a1, b1)
                ]
            for lo, hi in pieces:
                k = int(gen.poisson(r * (hi - lo)))
                for _ in range(k):
                    out.append((tgt, float(lo + gen.random() * (hi - lo))))
    out.sort(key=lambda e: (e[1], e[0]))
    return out


def _complement(ivs, inside):
    """Parts of the intervals where the target is outside `inside`."""
    if inside is None:
        return list(ivs)
    ilo, ihi = inside
    pieces = []
    for a, b in ivs:
        if a < ilo:
            pieces.append((a, min(b, ilo)))
        if b > ihi:
            pieces.append((max(a, ihi), b))
    return [(a, b) for a, b in pieces if b > a]


def max_separated(points: list, n: int) -> int:
    """Greedy count of pairwise well-separated space-time points.

    Canonical order (time, then site); the result is a certified lower bound
    on the maximum separated subset size.
    """
    ordered = sorted(points, key=lambda p: (p[1], tuple(p[0])))
    chosen: list = []
    for site, t in ordered:
        p = (tuple(site), t)
        if all(separated(p, q, n) for q in chosen):
            chosen.append(p)
    return len(chosen)


# -- conditional extinction bound --------------------------------------------------


@dataclass
class ExtinctionBoundReport:
    bound: float
    frequency: float
    n_conditioned: int
    n_extinct: int
    n_total: int
    inconclusive: bool
    estimate: Estimate


def _extinction_bound_worker(payload, start, stop):
    kernel, delta, clip_box, seed_set, k_level, seed, horizon_cont, labels = payload
    shell = Shell(inner=clip_box, widths=(math.inf,) * kernel.dimension)
    out = []
    for r in range(start, stop):
        cfg = SimConfig(
            kernel=kernel, delta=delta, horizon=clip_box.height,
            domain=clip_box, seed=seed,
        )
        traj_summary = _simulate(cfg, seed_set, record=True,
                                 stream_labels=(*labels, "box"), replicate=r)
        traj = Trajectory(seed_set, traj_summary.events, traj_summary.termination,
                          traj_summary.final_set, clip_box.height,
                          traj_summary.extinction_time)
        region = infected_region(traj, clip_box)
        top = traj.final_set
        e_out = expected_arrows(region, kernel, shell)
        if e_out + len(top) > k_level:
            out.append((False, False))
            continue
        # conditioned on the low-leakage event: continue every component
        # unrestricted with fresh randomness and ask whether all of them die
        arrows = sample_shell_arrows(region, kernel, shell,
                                     seed, (*labels, "leak", r))
        died = True
        radius = default_escape_radius(kernel, delta, horizon_cont,
                                       max(seed_set.radius, clip_box.bounding_ranges()[0][1] + 1))
        comp_idx = 0
        components = []
        if top:
            components.append(SeedSet(top))
        for tgt, _t in arrows:
            components.append(SeedSet(frozenset({tgt})))
        for comp in components:
            ccfg = SimConfig(kernel=kernel, delta=delta, horizon=horizon_cont,
                             escape_radius=radius, seed=seed)
            s = _simulate(ccfg, comp, stream_labels=(*labels, "cont", r, comp_idx))
            comp_idx += 1
            if s.termination != "extinct":
                died = False
                break
        out.append((True, died))
    return out


def check_extinction_bound(kernel: Kernel, delta: float, half_width: float,
                           height: float, seed_set: SeedSet, k_level: float,
                           n: int, seed: int = 0, horizon_cont: float = 60.0,
                           workers: int = 1,
                           labels: tuple = ("ext-bound",)) -> ExtinctionBoundReport:
    """Empirical check of the conditional extinction lower bound.

    Among replicates whose box run leaks at most k (expected outgoing arrows
    plus top occupancy), the continued process should die with probability at
    least (e * (1 + total_rate))^(-k).  Components are continued with fresh
    independent randomness, which can only underestimate the extinction
    frequency, so the check is conservative.
    """
    clip_box = box(half_width, height, dimension=kernel.dimension)
    rows = _pmap(
        _extinction_bound_worker,
        (kernel, delta, clip_box, seed_set, k_level, seed, horizon_cont, labels),
        n, workers,
    )
    n_cond = sum(h for h, _ in rows)
    n_ext = sum(d for _, d in rows)
    lam = kernel.total_rate()
    bound = (math.e * (1.0 + lam)) ** (-k_level)
    freq = n_ext / n_cond if n_cond else math.nan
    lo, hi = wilson_interval(n_ext, n_cond) if n_cond else (math.nan, math.nan)
    est = Estimate(freq, lo, hi, n_cond, 0, (seed, *labels))
    return ExtinctionBoundReport(
        bound=bound,
        frequency=freq,
        n_conditioned=n_cond,
        n_extinct=n_ext,
        n_total=n,
        inconclusive=n_cond < 100,
        estimate=est,
    )


# -- extinction time tail -------------------------------------------------------


@dataclass
class TailFit:
    slope: float
    intercept: float
    r_squared: float
    grid: list
    log_freq: list
    n_extinct: int
    n_total: int
    inconclusive: bool


def _tau_worker(payload, start, stop):
    config, seed_set, labels = payload
    out = []
    for r in range(start, stop):
        s = _simulate(config, seed_set, stream_labels=labels, replicate=r)
        out.append(s.extinction_time if s.termination == "extinct" else math.nan)
    return out


def extinction_tail(config: SimConfig, seed_set: SeedSet, n: int,
                    workers: int = 1, labels: tuple = ("tail",),
                    min_extinct: int = 200) -> TailFit:
    """Least-squares slope of the log upper-tail frequency of extinction times.

    The grid spans [median, 95th percentile] of the observed extinction times,
    avoiding the short-time transient.
    """
    config = _with_escape(config, seed_set)
    taus = np.array(_pmap(_tau_worker, (config, seed_set, labels), n, workers))
    taus = taus[~np.isnan(taus)]
    if len(taus) < min_extinct:
        return TailFit(math.nan, math.nan, math.nan, [], [], len(taus), n, True)
    grid = np.linspace(np.median(taus), np.percentile(taus, 95.0), 20)
    freq = np.array([(taus >= t).sum() / n for t in grid])
    y = np.log(freq)
    slope, intercept = np.polyfit(grid, y, 1)
    resid = y - (slope * grid + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else math.nan
    return TailFit(
        float(slope), float(intercept), r2, grid.tolist(), y.tolist(),
        len(taus), n, False,
    )


# -- growth envelope --------------------------------------------------------------


def _envelope_worker(payload, start, stop):
    config, seed_set, env, labels = payload
    out = []
    for r in range(start, stop):
        s = _simulate(config, seed_set, envelope=env, stream_labels=labels, replicate=r)
        out.append(s.envelope_violated or s.termination == "escaped")
    return out


def _check_growth_hypothesis(kernel: Kernel):
    if kernel.family == "power-law" and kernel.cutoff is None:
        limit = 2 * kernel.dimension + 1
        if kernel.alpha <= limit:
            raise ValueError(
                f"at-most-linear-speed check needs tail decay alpha > {limit} "
                f"in d={kernel.dimension}; got alpha={kernel.alpha}"
            )


def growth_envelope(kernel: Kernel, delta: float, seed_set: SeedSet, theta: float,
                    n_reps: int, horizon: float = 100.0, seed: int = 0,
                    workers: int = 1, labels: tuple = ("envelope",)) -> Estimate:
    """Frequency of the event that the set stays in the moving cube of half
    width radius*theta/2 + t*theta up to the horizon."""
    _check_growth_hypothesis(kernel)
    n_r = seed_set.radius
    env = (n_r * theta / 2.0, theta)
    reach = kernel.effective_reach()
    radius = int(math.ceil(env[0] + horizon * theta + reach + 2))
    cfg = SimConfig(kernel=kernel, delta=delta, horizon=horizon,
                    escape_radius=max(radius, 4), seed=seed)
    rows = _pmap(_envelope_worker, (cfg, seed_set, env, labels), n_reps, workers)
    ok = sum(not v for v in rows)
    lo, hi = wilson_interval(ok, n_reps)
    return Estimate(ok / n_reps, lo, hi, n_reps, 0, (seed, *labels))


def find_growth_speed(kernel: Kernel, delta: float, seed_set: SeedSet,
                      horizon: float = 100.0, n_reps: int = 1000, seed: int = 0,
                      target: float = 0.99, thetas=None, workers: int = 1):
    """Smallest speed from a doubling ladder whose envelope frequency meets target."""
    _check_growth_hypothesis(kernel)
    if thetas is None:
        lam = kernel.total_rate() + delta
        thetas = [lam * (2**j) for j in range(0, 7)]
    best = None
    for j, theta in enumerate(thetas):
        est = growth_envelope(kernel, delta, seed_set, theta, n_reps, horizon,
                              seed, workers, labels=("envelope", j))
        best = (theta, est)
        if est.value >= target:
            return best
    return best


# -- coupling audit ----------------------------------------------------------------


def _coupled_worker(payload, start, stop):
    lo_cfg, hi_cfg, seed_lo, seed_hi, labels = payload
    out = []
    for r in range(start, stop):
        lo_r = replace(lo_cfg, replicate_index=r)
        hi_r = replace(hi_cfg, replicate_index=r)
        lo_res, hi_res, violations = _coupled_summary(
            lo_r, hi_r, seed_lo, seed_hi, stream_labels=labels
        )
        out.append((violations, lo_res[1] != "extinct", hi_res[1] != "extinct"))
    return out


def coupling_violations(lo_cfg: SimConfig, hi_cfg: SimConfig, seed_lo: SeedSet,
                        seed_hi: SeedSet, n: int, workers: int = 1,
                        labels: tuple = ("couple",)) -> dict:
    """Audit n coupled replicates; returns violation and survival counts."""
    rows = _pmap(_coupled_worker, (lo_cfg, hi_cfg, seed_lo, seed_hi, labels), n, workers)
    return {
        "n": n,
        "violations": sum(v for v, _, _ in rows),
        "lo_survived": sum(a for _, a, _ in rows),
        "hi_survived": sum(b for _, _, b in rows),
    }
