import math

import numpy as np
import pytest

import _oracles as oracle
from corrbound import (
    CONVERGED,
    DEGENERATE_ROW,
    HIT_CAP,
    DegenerateRow,
    SimulationConfig,
    StepRecord,
    Trajectory,
    collect_pairs,
    iterate_once,
    pearson_corr,
    post_transient_pairs,
    simulate_many,
    simulate_trajectory,
)
from corrbound.dynamics import trial_stream


class TestPearson:
    def test_matches_direct_formula_on_random_rows(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            x = rng.normal(size=8)
            y = rng.normal(size=8)
            assert pearson_corr(x, y) == pytest.approx(
                oracle.pearson_direct(list(x), list(y)), abs=1e-12)

    def test_frozen_values(self):
        assert pearson_corr([1, 0, 2], [0, 1, 1]) == 0.0
        assert pearson_corr([1, 2, 4], [1, 3, 9]) == pytest.approx(
            0.9958705948858225, abs=1e-15)
        assert pearson_corr([0, 1, 3, 6], [2, -1, 0, 5]) == pytest.approx(
            0.6666666666666666, abs=1e-15)

    def test_perfect_correlation_is_exactly_one(self):
        assert pearson_corr([1, 2, 3], [1, 2, 3]) == 1.0
        assert pearson_corr([1, 2, 3], [10, 20, 30]) == 1.0
        assert pearson_corr([1, 2, 3], [3, 2, 1]) == -1.0

    def test_result_always_clamped_to_unit_interval(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            x = rng.normal(size=4)
            y = x * rng.uniform(0.5, 2) + rng.normal(scale=1e-14, size=4)
            assert -1.0 <= pearson_corr(x, y) <= 1.0

    def test_constant_row_raises(self):
        with pytest.raises(DegenerateRow):
            pearson_corr([2.0, 2.0, 2.0], [1.0, 0.0, 1.0])


class TestIterateOnce:
    def test_matches_direct_correlation_matrix(self):
        rng = np.random.default_rng(5)
        p = rng.normal(size=(6, 6))
        got = iterate_once(p)
        want = oracle.corr_matrix_direct(p.tolist())
        assert oracle.max_abs_diff(got.tolist(), want) < 1e-12

    def test_frozen_three_by_three(self):
        p = np.array([[1., 2., 3.], [1., 4., 9.], [2., 2., 5.]])
        got = iterate_once(p)
        want = np.array([
            [1.0, 0.989743318610787, 0.8660254037844387],
            [0.989743318610787, 1.0, 0.9285714285714286],
            [0.8660254037844387, 0.9285714285714286, 1.0]])
        assert np.allclose(got, want, atol=1e-15, rtol=0)

    def test_output_is_exactly_symmetric_with_unit_diagonal(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            c = iterate_once(rng.normal(size=(7, 7)))
            assert np.array_equal(c, c.T)
            assert np.all(np.diagonal(c) == 1.0)
            assert np.all(np.abs(c) <= 1.0)

    def test_invariant_under_positive_affine_row_maps(self):
        rng = np.random.default_rng(7)
        p = rng.normal(size=(5, 8))
        scale = rng.uniform(0.5, 3, size=(5, 1))
        shift = rng.normal(size=(5, 1))
        assert np.allclose(iterate_once(p), iterate_once(scale * p + shift),
                           atol=1e-12, rtol=0)

    def test_two_block_sign_matrix_is_machine_exact_fixed_point(self):
        p = np.array([[1., -1.], [-1., 1.]])
        assert np.array_equal(iterate_once(p), p)
        blk = np.ones((6, 6))
        blk[:3, 3:] = -1.0
        blk[3:, :3] = -1.0
        assert np.array_equal(iterate_once(blk), blk)

    def test_constant_row_raises_with_row_index(self):
        p = np.array([[1., 2., 3.], [5., 5., 5.], [0., 1., 0.]])
        with pytest.raises(DegenerateRow) as exc:
            iterate_once(p)
        assert exc.value.row == 1


class TestSimulate:
    def test_same_seed_same_trajectory(self):
        cfg = SimulationConfig(n=12, master_seed=99)
        a = simulate_trajectory(cfg, 4)
        b = simulate_trajectory(cfg, 4)
        assert a == b

    def test_different_trials_differ(self):
        cfg = SimulationConfig(n=12, master_seed=99)
        a = simulate_trajectory(cfg, 0)
        b = simulate_trajectory(cfg, 1)
        assert a.steps[0].delta_raw != b.steps[0].delta_raw

    def test_trial_streams_are_disjoint(self):
        x = trial_stream(5, 0).normal(size=4)
        y = trial_stream(5, 1).normal(size=4)
        assert not np.any(x == y)

    def test_step_bookkeeping(self):
        t = simulate_trajectory(SimulationConfig(n=10, master_seed=1), 0)
        assert t.status == CONVERGED
        assert t.stop_index == len(t.steps)
        assert [s.k for s in t.steps] == list(range(t.stop_index))
        for s in t.steps:
            assert s.delta_norm == s.delta_raw / 10
        for s, nxt in zip(t.steps, t.steps[1:]):
            assert s.rho == nxt.delta_raw / s.delta_raw
        assert t.steps[-1].rho is None

    def test_rho_none_only_at_final_step(self):
        t = simulate_trajectory(SimulationConfig(n=15, master_seed=2), 3)
        assert all(s.rho is not None for s in t.steps[:-1])

    def test_loose_epsilon_stops_sooner(self):
        tight = simulate_trajectory(SimulationConfig(n=10, master_seed=8), 0)
        loose = simulate_trajectory(
            SimulationConfig(n=10, master_seed=8, epsilon=0.5), 0)
        assert loose.stop_index < tight.stop_index
        assert loose.status == CONVERGED

    def test_k_max_cap(self):
        t = simulate_trajectory(
            SimulationConfig(n=10, master_seed=8, epsilon=1e-300, k_max=3), 0)
        assert t.status == HIT_CAP
        assert t.stop_index == 3

    def test_simulate_many_matches_individual_runs(self):
        cfg = SimulationConfig(n=8, master_seed=11)
        batch = simulate_many(cfg, 5)
        assert [t.trial_id for t in batch] == [0, 1, 2, 3, 4]
        for t in batch:
            assert t == simulate_trajectory(cfg, t.trial_id)

    def test_parallel_equals_serial(self):
        cfg = SimulationConfig(n=8, master_seed=11)
        assert simulate_many(cfg, 12, jobs=4) == simulate_many(cfg, 12)

    def test_small_dimension_runs_without_crash(self):
        for t in simulate_many(SimulationConfig(n=2, master_seed=0), 20):
            assert t.status in (CONVERGED, HIT_CAP, DEGENERATE_ROW)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SimulationConfig(n=1)
        with pytest.raises(ValueError):
            SimulationConfig(n=10, epsilon=0.0)
        with pytest.raises(ValueError):
            SimulationConfig(n=10, k_max=0)
        with pytest.raises(ValueError):
            SimulationConfig(n=10, k_post=-1)
        with pytest.raises(ValueError):
            SimulationConfig(n=10, master_seed=-1)


def _toy_trajectory(deltas, n=4, status=CONVERGED, trial_id=0):
    steps = []
    for k, d in enumerate(deltas):
        rho = deltas[k + 1] / d if (k + 1 < len(deltas) and d > 0) else None
        steps.append(StepRecord(k=k, delta_raw=d * n, rho=rho,
                                delta_norm=d))
    return Trajectory(trial_id=trial_id, n=n, stop_index=len(deltas),
                      steps=tuple(steps), status=status)


class TestPostTransient:
    def test_window_is_kpost_through_stop_minus_two(self):
        t = _toy_trajectory([1.0, 0.5, 0.4, 0.2, 0.01, 1e-8])
        got = post_transient_pairs(t, 2)
        assert got == [(0.4, 0.2 / 0.4), (0.2, 0.01 / 0.2),
                       (0.01, 1e-8 / 0.01)]

    def test_kpost_zero_takes_all_but_last(self):
        t = _toy_trajectory([1.0, 0.5, 0.25])
        assert len(post_transient_pairs(t, 0)) == 2

    def test_short_trajectory_gives_empty_list(self):
        t = _toy_trajectory([1.0, 0.5, 0.25])
        assert post_transient_pairs(t, 2) == []

    def test_degenerate_trajectory_rejected(self):
        t = _toy_trajectory([1.0, 0.5, 0.4, 0.2], status=DEGENERATE_ROW)
        with pytest.raises(ValueError):
            post_transient_pairs(t, 2)

    def test_zero_ratio_steps_are_skipped(self):
        t = _toy_trajectory([1.0, 0.5, 0.4, 0.0, 0.0])
        deltas = [d for d, _ in post_transient_pairs(t, 2)]
        assert 0.4 not in deltas  # its ratio is 0/0.4 = 0, not a valid pair

    def test_collect_pairs_concatenates_and_tags_ids(self):
        a = _toy_trajectory([1.0, 0.5, 0.4, 0.2, 0.1], trial_id=7)
        b = _toy_trajectory([2.0, 1.0, 0.5, 0.1], trial_id=9)
        ids, deltas, rhos = collect_pairs([a, b], 2)
        assert list(ids) == [7, 7, 9]
        assert list(deltas) == [0.4, 0.2, 0.5]
        assert rhos[0] == 0.5

    def test_collect_pairs_skips_degenerate(self):
        a = _toy_trajectory([1.0, 0.5, 0.4, 0.2, 0.1], trial_id=1)
        bad = _toy_trajectory([1.0, 0.5, 0.4, 0.2], status=DEGENERATE_ROW,
                               trial_id=2)
        ids, _, _ = collect_pairs([a, bad], 2)
        assert set(ids) == {1}


class TestObservablesAgainstOracle:
    def test_delta_matches_frobenius_of_successive_iterates(self):
        rng = np.random.default_rng(23)
        p = rng.normal(size=(6, 6))
        p1 = iterate_once(p)
        p2 = iterate_once(p1)
        t = simulate_trajectory(SimulationConfig(n=6, master_seed=0), 0)
        # same pipeline by hand, starting from the trajectory's own stream
        q = trial_stream(0, 0).uniform(-1.0, 1.0, size=(6, 6))
        q1 = iterate_once(q)
        d0 = oracle.frobenius_direct(q1.tolist(), q.tolist())
        assert t.steps[0].delta_raw == pytest.approx(d0, abs=1e-12)
        assert math.isclose(
            oracle.frobenius_direct(p2.tolist(), p1.tolist()),
            float(np.linalg.norm(p2 - p1)), abs_tol=1e-12)
