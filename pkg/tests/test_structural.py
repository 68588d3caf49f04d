import math

import numpy as np
import pytest

import _oracles as oracle
from corrbound import (
    BinPartition,
    BootstrapConfig,
    BoundConfig,
    BoundFunction,
    EmptySample,
    Provenance,
    bootstrap_structural,
    expansion_threshold,
    quantile_jump_scan,
    sensitivity_cmin,
)


def _bound(edges, values, level=0.95, n=None):
    prov = Provenance(config=BoundConfig(p=level, c_min=1), n=n, k_post=2,
                      training_hash="0" * 16)
    return BoundFunction(partition=BinPartition(tuple(edges), None),
                         log_quantiles=tuple(math.log(v) for v in values),
                         bin_values=tuple(values), level=level,
                         provenance=prov)


class TestExpansionThreshold:
    def test_first_crossing_bin_and_geometric_midpoint(self):
        b = _bound([1e-3, 1e-2, 1e-1, 1.0, 10.0], [0.4, 0.9, 1.2, 1.5], n=30)
        s = expansion_threshold(b)
        assert s.b_star == 3
        assert s.delta_star == math.sqrt(1e-1 * 1.0)
        assert s.envelope_sup == 1.5
        assert s.bound_at_threshold == 1.2
        assert s.n == 30
        assert s.level == 0.95

    def test_first_crossing_wins_over_larger_later_value(self):
        b = _bound([1e-3, 1e-2, 1e-1, 1.0, 10.0], [0.5, 1.1, 0.9, 1.4])
        s = expansion_threshold(b)
        assert s.b_star == 2
        assert s.bound_at_threshold == 1.1
        assert s.envelope_sup == 1.4

    def test_exactly_one_is_not_a_crossing(self):
        b = _bound([1e-3, 1e-2, 1e-1], [1.0, 1.0])
        assert expansion_threshold(b).b_star is None

    def test_no_crossing_reports_none_but_keeps_envelope(self):
        b = _bound([1e-3, 1e-2, 1e-1], [0.4, 0.8])
        s = expansion_threshold(b)
        assert s.b_star is None
        assert s.delta_star is None
        assert s.bound_at_threshold is None
        assert s.envelope_sup == 0.8


class TestBootstrap:
    def test_same_seed_reproduces_everything(self, ds10):
        cfg = BoundConfig(p=0.9, c_min=50)
        boot = BootstrapConfig(n_resamples=40, seed=77)
        a = bootstrap_structural(ds10, cfg, boot, return_samples=True)
        b = bootstrap_structural(ds10, cfg, boot, return_samples=True)
        assert a == b

    def test_different_seed_differs(self, ds10):
        cfg = BoundConfig(p=0.9, c_min=50)
        a = bootstrap_structural(ds10, cfg, BootstrapConfig(20, seed=1))
        b = bootstrap_structural(ds10, cfg, BootstrapConfig(20, seed=2))
        assert a.summaries != b.summaries

    def test_parallel_equals_serial(self, ds10):
        cfg = BoundConfig(p=0.9, c_min=50)
        boot = BootstrapConfig(n_resamples=16, seed=5)
        assert (bootstrap_structural(ds10, cfg, boot, jobs=4)
                == bootstrap_structural(ds10, cfg, boot))

    def test_resample_streams_do_not_depend_on_total_count(self, ds10):
        cfg = BoundConfig(p=0.9, c_min=50)
        few = bootstrap_structural(ds10, cfg, BootstrapConfig(5, seed=9),
                                   return_samples=True)
        many = bootstrap_structural(ds10, cfg, BootstrapConfig(12, seed=9),
                                    return_samples=True)
        assert few.samples["envelope_sup"] == \
            many.samples["envelope_sup"][:5]

    def test_interval_endpoints_are_order_statistics(self, ds10):
        cfg = BoundConfig(p=0.9, c_min=50)
        res = bootstrap_structural(ds10, cfg, BootstrapConfig(40, seed=3),
                                   return_samples=True)
        env = next(s for s in res.summaries if s.statistic == "envelope_sup")
        stats = list(res.samples["envelope_sup"])
        assert env.ci_low == oracle.orderstat_direct(stats, 0.025)
        assert env.ci_high == oracle.orderstat_direct(stats, 0.975)
        assert env.median == oracle.orderstat_direct(stats, 0.5)

    def test_forced_single_trajectory_resamples_fail(self, ds10):
        # every resample repeats trajectory 0, far short of c_min pairs
        cfg = BoundConfig(p=0.9, c_min=10 ** 6)

        def sampler(rng, n):
            return np.zeros(n, dtype=int)

        with pytest.raises(Exception):
            # point estimate itself cannot be built at this c_min
            bootstrap_structural(ds10, cfg, BootstrapConfig(4, seed=0),
                                 index_sampler=sampler)

    def test_failed_resamples_are_counted(self):
        # resamples stuck on the 2-pair trajectory cannot reach c_min = 10
        from corrbound import CONVERGED, StepRecord, Trajectory

        def traj(trial_id, deltas):
            steps = []
            for k, d in enumerate(deltas):
                rho = (deltas[k + 1] / d
                       if k + 1 < len(deltas) else None)
                steps.append(StepRecord(k=k, delta_raw=d * 4, rho=rho,
                                        delta_norm=d))
            return Trajectory(trial_id=trial_id, n=4,
                              stop_index=len(deltas), steps=tuple(steps),
                              status=CONVERGED)

        short = traj(0, [1.0, 0.5, 0.4, 0.2, 0.1])
        longs = [traj(i, [2.0 ** -k for k in range(53)]) for i in (1, 2)]
        cfg = BoundConfig(p=0.9, c_min=10)

        def sampler(rng, n):
            return np.zeros(n, dtype=int)

        res = bootstrap_structural([short] + longs, cfg,
                                   BootstrapConfig(3, seed=0),
                                   index_sampler=sampler)
        assert res.n_failed == 3
        env = next(s for s in res.summaries
                   if s.statistic == "envelope_sup")
        assert env.median is None
        assert env.point_estimate is not None  # full data still works

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BootstrapConfig(n_resamples=0, seed=1)
        with pytest.raises(ValueError):
            BootstrapConfig(n_resamples=10, seed=1,
                            interval_levels=(0.9, 0.1))


class TestSensitivity:
    def test_rows_follow_requested_settings(self, ds30):
        rows = sensitivity_cmin(ds30, BoundConfig(p=0.95, c_min=200),
                                [50, 100, 200])
        assert [r.c_min for r in rows] == [50, 100, 200]
        for r in rows:
            assert r.min_count >= r.c_min
            assert r.n == 30
            assert r.envelope_sup > 0


class TestJumpScan:
    def _two_mass(self):
        deltas = np.full(160, 0.05)
        rhos = np.concatenate([np.full(150, 0.001), np.full(10, 0.3)])
        return np.column_stack([deltas, rhos])

    def test_two_mass_sample_jump(self):
        grid = [0.90 + i * 0.0005 for i in range(199)]
        rep = quantile_jump_scan(self._two_mass(), grid)
        assert abs(rep.max_ratio - 300.0) < 1e-9
        assert rep.q_low == 0.001
        assert rep.q_high == 0.3
        assert rep.p_low == pytest.approx(0.9375, abs=1e-12)
        assert rep.tail_count == 10
        assert rep.tail_fraction == 10 / 160
        assert rep.n_pairs == 160

    def test_tail_trajectory_count(self):
        ids = np.concatenate([np.zeros(150, dtype=int),
                              np.array([1, 1, 1, 2, 2, 3, 3, 3, 3, 4])])
        grid = [0.90 + i * 0.0005 for i in range(199)]
        rep = quantile_jump_scan(self._two_mass(), grid, trial_ids=ids)
        assert rep.n_tail_trajectories == 4

    def test_tie_on_max_ratio_reports_first(self):
        rhos = np.concatenate([np.full(50, 0.001), np.full(25, 0.01),
                               np.full(25, 0.1)])
        pairs = np.column_stack([np.full(100, 0.05), rhos])
        grid = [0.40, 0.60, 0.80, 1.0]
        rep = quantile_jump_scan(pairs, grid)
        # ratios: 0.01/0.001 = 10 then 0.1/0.01 = 10; first wins
        assert rep.p_low == 0.40
        assert rep.q_low == 0.001

    def test_nonpositive_ratios_dropped(self, caplog):
        import logging
        pairs = np.array([[0.05, 0.0], [0.05, 0.2], [0.05, 0.5],
                          [0.05, -0.1], [0.05, 0.4]])
        with caplog.at_level(logging.WARNING):
            rep = quantile_jump_scan(pairs, [0.5, 1.0])
        assert rep.n_pairs == 3
        assert "dropped 2" in caplog.text

    def test_grid_validation(self):
        pairs = np.array([[0.05, 0.2], [0.05, 0.5]])
        with pytest.raises(ValueError):
            quantile_jump_scan(pairs, [0.9])
        with pytest.raises(ValueError):
            quantile_jump_scan(pairs, [0.9, 0.8])
        with pytest.raises(ValueError):
            quantile_jump_scan(pairs, [0.0, 0.5])
        with pytest.raises(ValueError):
            quantile_jump_scan(pairs, [0.5, 1.1])

    def test_empty_sample(self):
        with pytest.raises(EmptySample):
            quantile_jump_scan(np.empty((0, 2)), [0.5, 1.0])

    def test_real_data_smoke(self, pairs30):
        ids, deltas, rhos = pairs30
        grid = [0.90 + i * 0.0005 for i in range(199)]
        rep = quantile_jump_scan(np.column_stack([deltas, rhos]), grid,
                                 trial_ids=ids)
        assert rep.max_ratio >= 1.0
        assert 0 < rep.tail_fraction < 0.2
