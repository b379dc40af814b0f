"""Event-driven core: rates, trajectories, couplings, determinism."""

import math

import numpy as np
import pytest
import scipy.stats

from lrcp.engine import SimConfig, Trajectory, _coupled_summary, _simulate, run, run_coupled
from lrcp.geometry import SeedSet, SpaceTimeBox, box
from lrcp.kernel import finite_table, nearest_neighbor, power_law

NN = nearest_neighbor(1, 1.0)
ORIGIN = SeedSet.origin(1)


def replay(traj: Trajectory):
    state = set(traj.initial.offsets)
    for t, site, up in traj.events:
        if up:
            assert site not in state
            state.add(site)
        else:
            assert site in state
            state.discard(site)
    return frozenset(state)


class TestRun:
    def test_trajectory_replays_to_final_set(self):
        cfg = SimConfig(kernel=NN, delta=1.0, horizon=8.0, escape_radius=100, seed=3)
        traj = run(cfg, ORIGIN)
        assert replay(traj) == traj.final_set

    def test_no_healing_means_growth_only(self):
        cfg = SimConfig(kernel=NN, delta=0.0, horizon=6.0, escape_radius=100, seed=4)
        traj = run(cfg, ORIGIN)
        assert traj.termination != "extinct"
        assert all(up for _, _, up in traj.events)

    def test_extinction_records_time(self):
        cfg = SimConfig(kernel=NN, delta=50.0, horizon=100.0, escape_radius=10, seed=5)
        traj = run(cfg, ORIGIN)
        assert traj.termination == "extinct"
        assert traj.final_set == frozenset()
        assert 0 < traj.extinction_time < 1.0

    def test_single_site_survival_rate(self):
        # only healing acts on a one-site domain: survival to T is exp(-dT)
        n, alive = 4000, 0
        cfg = SimConfig(kernel=NN, delta=1.0, horizon=1.0,
                        domain=frozenset({(0,)}), seed=6)
        for r in range(n):
            s = _simulate(cfg, ORIGIN, replicate=r)
            alive += s.termination == "horizon"
        p = math.exp(-1.0)
        assert abs(alive / n - p) < 3 * math.sqrt(p * (1 - p) / n)

    def test_domain_restriction_confines(self):
        dom = frozenset({(0,), (1,)})
        cfg = SimConfig(kernel=NN, delta=0.0, horizon=50.0, domain=dom, seed=7)
        traj = run(cfg, ORIGIN)
        assert traj.final_set <= dom

    def test_escape_termination(self):
        cfg = SimConfig(kernel=NN, delta=0.0, horizon=1000.0, escape_radius=3, seed=8)
        traj = run(cfg, ORIGIN)
        assert traj.termination == "escaped"

    def test_intervals_disjoint_and_clipped(self):
        cfg = SimConfig(kernel=NN, delta=1.5, horizon=5.0, escape_radius=80, seed=9)
        traj = run(cfg, ORIGIN)
        for site, ivs in traj.intervals().items():
            last_end = -1.0
            for a, b in ivs:
                assert 0.0 <= a <= b <= traj.horizon
                assert a >= last_end
                last_end = b

    def test_determinism_bit_for_bit(self):
        cfg = SimConfig(kernel=power_law(1, 2.0, 1.0, cutoff=8), delta=0.7,
                        horizon=6.0, escape_radius=200, seed=10, replicate_index=5)
        t1 = run(cfg, ORIGIN)
        t2 = run(cfg, ORIGIN)
        assert t1.events == t2.events
        assert t1.final_set == t2.final_set

    def test_holding_time_distribution(self):
        # from m well-separated sites the first event is Exp(m * (delta + rate))
        kern = NN
        seeds = SeedSet(frozenset({(-40,), (0,), (40,)}))
        cfg = SimConfig(kernel=kern, delta=0.5, horizon=50.0, escape_radius=200,
                        seed=11)
        total = 3 * (0.5 + kern.total_rate())
        times = []
        for r in range(10_000):
            s = _simulate(cfg, seeds, replicate=r)
            times.append(s.first_event[0])
        stat = scipy.stats.kstest(times, "expon", args=(0, 1 / total))
        assert stat.pvalue > 0.01

    def test_size_integral_single_site(self):
        cfg = SimConfig(kernel=NN, delta=0.0, horizon=3.0,
                        domain=frozenset({(0,)}), seed=12)
        s = _simulate(cfg, ORIGIN)
        assert s.size_integral == pytest.approx(3.0)
        assert s.size_integral_tail == pytest.approx(0.3)


class TestTiltedDomain:
    def test_sliding_box_removes_sites(self):
        # the box slides right at speed 2; a site at the origin exits at t = 0.5
        dom = SpaceTimeBox((1.0,), 4.0, (2.0,))
        cfg = SimConfig(kernel=NN, delta=0.0, horizon=4.0, domain=dom, seed=13)
        traj = run(cfg, ORIGIN)
        downs = [(t, site) for t, site, up in traj.events if not up]
        assert any(site == (0,) and abs(t - 0.5) < 1e-9 for t, site in downs)
        for site in traj.final_set:
            assert dom.contains(site, 4.0)

    def test_infections_follow_the_box(self):
        dom = SpaceTimeBox((2.0,), 6.0, (1.0,))
        cfg = SimConfig(kernel=nearest_neighbor(1, 4.0), delta=0.0, horizon=6.0,
                        domain=dom, seed=14)
        traj = run(cfg, ORIGIN)
        for t, site, up in traj.events:
            if up:
                assert dom.contains(site, t)


class TestCoupling:
    def test_identical_configs_identical_trajectories(self):
        cfg = SimConfig(kernel=NN, delta=1.0, horizon=5.0, escape_radius=100, seed=20)
        t_lo, t_hi = run_coupled(cfg, cfg, ORIGIN, ORIGIN)
        assert t_lo.events == t_hi.events

    def test_seed_containment(self):
        big = SeedSet(frozenset({(0,), (1,)}))
        cfg = SimConfig(kernel=NN, delta=1.0, horizon=5.0, escape_radius=100, seed=21)
        for r in range(200):
            _, _, violations = _coupled_summary(
                SimConfig(kernel=NN, delta=1.0, horizon=5.0, escape_radius=100,
                          seed=21, replicate_index=r),
                SimConfig(kernel=NN, delta=1.0, horizon=5.0, escape_radius=100,
                          seed=21, replicate_index=r),
                ORIGIN, big,
            )
            assert violations == 0

    def test_kernel_ordered_containment(self):
        lo_k = NN
        hi_k = finite_table(1, {(1,): 1.0, (-1,): 1.0, (2,): 0.5})
        for r in range(200):
            lo = SimConfig(kernel=lo_k, delta=1.0, horizon=4.0, escape_radius=100,
                           seed=22, replicate_index=r)
            hi = SimConfig(kernel=hi_k, delta=1.0, horizon=4.0, escape_radius=100,
                           seed=22, replicate_index=r)
            res_lo, res_hi, violations = _coupled_summary(lo, hi, ORIGIN, ORIGIN)
            assert violations == 0
            assert res_lo[2] <= res_hi[2]

    def test_delta_ordered_containment(self):
        for r in range(200):
            lo = SimConfig(kernel=NN, delta=2.0, horizon=4.0, escape_radius=100,
                           seed=23, replicate_index=r)
            hi = SimConfig(kernel=NN, delta=0.5, horizon=4.0, escape_radius=100,
                           seed=23, replicate_index=r)
            res_lo, res_hi, violations = _coupled_summary(lo, hi, ORIGIN, ORIGIN)
            assert violations == 0
            assert res_lo[2] <= res_hi[2]

    def test_incomparable_rejected(self):
        hi = SimConfig(kernel=NN, delta=1.0, horizon=4.0, escape_radius=50, seed=24)
        lo = SimConfig(kernel=nearest_neighbor(1, 2.0), delta=1.0, horizon=4.0,
                       escape_radius=50, seed=24)
        with pytest.raises(ValueError):
            run_coupled(lo, hi, ORIGIN, ORIGIN)
        with pytest.raises(ValueError):
            run_coupled(
                SimConfig(kernel=NN, delta=0.5, horizon=4.0, escape_radius=50, seed=24),
                SimConfig(kernel=NN, delta=1.0, horizon=4.0, escape_radius=50, seed=24),
                ORIGIN, ORIGIN,
            )

    def test_seed_must_be_contained(self):
        cfg = SimConfig(kernel=NN, delta=1.0, horizon=4.0, escape_radius=50, seed=25)
        with pytest.raises(ValueError):
            run_coupled(cfg, cfg, SeedSet(frozenset({(0,), (1,)})), ORIGIN)


class TestConfigValidation:
    def test_negative_delta_rejected(self):
        with pytest.raises(ValueError):
            SimConfig(kernel=NN, delta=-1.0, horizon=1.0, escape_radius=10)

    def test_infinite_horizon_rejected(self):
        with pytest.raises(ValueError):
            SimConfig(kernel=NN, delta=1.0, horizon=math.inf, escape_radius=10)

    def test_horizon_beyond_domain_box(self):
        with pytest.raises(ValueError):
            SimConfig(kernel=NN, delta=1.0, horizon=5.0,
                      domain=box(2.0, 1.0, dimension=1))

    def test_missing_escape_radius(self):
        cfg = SimConfig(kernel=NN, delta=1.0, horizon=1.0)
        with pytest.raises(ValueError):
            run(cfg, ORIGIN)
