"""Dataset generators, sampling, normalization, and CSV round-trips."""

import numpy as np
import numpy.testing as npt
import pytest

from cnep.data import (
    Dataset,
    ObservationSet,
    Trajectory,
    gen_intersecting,
    gen_obstacle_pair,
    gen_sines,
    load_dataset,
    sample_batch,
    sample_obs_targets,
    save_dataset,
)
from cnep.errors import DatasetParseError
from cnep.geometry import collision_check

# chi-squared upper critical value at p = 0.01 for 4 degrees of freedom
CHI2_99_DF4 = 13.2767


class TestGenSines:
    def test_single_mode_tracks_base_curve(self):
        ds = gen_sines(1, samples_per_mode=10, T=100, seed=4)
        base = np.sin(2 * np.pi * ds.trajectories[0].times)
        for tr in ds.trajectories:
            assert np.max(np.abs(tr.sm[:, 0] - base)) < 0.02

    def test_all_modes_start_at_zero(self):
        ds = gen_sines(2, samples_per_mode=5, T=60, seed=0)
        for tr in ds.trajectories:
            assert abs(tr.sm[0, 0]) <= 0.02

    def test_four_frequency_classes_by_zero_crossings(self):
        ds = gen_sines(4, samples_per_mode=6, T=200, seed=1)
        crossings = []
        for tr in ds.trajectories:
            y = tr.sm[:, 0]
            crossings.append(int(np.sum(y[:-1] * y[1:] < 0)))
        # mode k has 2k - 1 interior sign changes
        assert sorted(set(crossings)) == [1, 3, 5, 7]
        counts = {c: crossings.count(c) for c in set(crossings)}
        assert all(v == 6 for v in counts.values())

    def test_seed_determinism(self):
        a = gen_sines(3, 7, 90, seed=123)
        b = gen_sines(3, 7, 90, seed=123)
        for ta, tb in zip(a.trajectories, b.trajectories):
            npt.assert_array_equal(ta.sm, tb.sm)

    def test_normalized_range(self):
        ds = gen_sines(4, 10, 100, seed=2)
        stack = ds.sm_stack()
        assert np.all(np.abs(stack) <= 1.5)

    def test_times_span_unit_interval(self):
        ds = gen_sines(1, 2, 50, seed=0)
        tr = ds.trajectories[0]
        assert tr.times[0] == 0.0 and tr.times[-1] == 1.0


class TestGenIntersecting:
    def test_exactly_four_trajectories(self):
        ds = gen_intersecting(T=100, seed=0)
        assert len(ds) == 4

    def test_common_value_at_half(self):
        ds = gen_intersecting(T=101, seed=3)
        for tr in ds.trajectories:
            i = int(np.argmin(np.abs(tr.times - 0.5)))
            assert abs(tr.sm[i, 0]) <= 0.03

    def test_shared_start(self):
        ds = gen_intersecting(T=80, seed=1)
        for tr in ds.trajectories:
            assert abs(tr.sm[0, 0]) <= 0.02

    def test_common_points_hold_on_noiseless_curves(self):
        from cnep.data import INTERSECTING_CURVES
        ds = gen_intersecting(T=60, seed=0)
        for t_star, v_star in ds.meta["common_points"]:
            for curve in INTERSECTING_CURVES:
                assert curve(np.array([t_star]))[0] == pytest.approx(v_star, abs=1e-12)


class TestGenObstaclePair:
    def test_endpoints(self):
        ds, _ = gen_obstacle_pair(T=100, seed=0)
        for tr in ds.trajectories:
            npt.assert_allclose(tr.sm[0], [0.0, 0.0], atol=1e-12)
            npt.assert_allclose(tr.sm[-1], [1.0, 0.0], atol=1e-12)

    def test_upper_arc_peak(self):
        ds, _ = gen_obstacle_pair(T=200, seed=5)
        upper = ds.trajectories[0]
        assert upper.sm[:, 1].max() == pytest.approx(0.4, abs=0.02)

    def test_demos_clear_the_obstacle(self):
        ds, box = gen_obstacle_pair(T=200, seed=2)
        for tr in ds.trajectories:
            collided, _ = collision_check(tr.sm, box)
            assert not collided

    def test_obstacle_geometry(self):
        _, box = gen_obstacle_pair(T=50, seed=0)
        assert box.center == (0.5, 0.0)
        assert box.half_extents == (0.1, 0.15)


class TestSampleObsTargets:
    def test_degenerate_bounds(self):
        ds = gen_sines(1, 1, 40, seed=0)
        obs, tgt_t, tgt_sm = sample_obs_targets(
            ds.trajectories[0], 1, 1, np.random.default_rng(0))
        assert len(obs) == 1 and len(tgt_t) == 1 and tgt_sm.shape == (1, 1)

    def test_tuples_come_from_grid(self):
        ds = gen_sines(2, 2, 50, seed=1)
        tr = ds.trajectories[0]
        rng = np.random.default_rng(7)
        for _ in range(20):
            obs, tgt_t, tgt_sm = sample_obs_targets(tr, 5, 5, rng)
            for t, v in zip(obs.times, obs.values):
                i = int(np.argmin(np.abs(tr.times - t)))
                assert tr.times[i] == t
                npt.assert_array_equal(tr.sm[i], v)
            for t, v in zip(tgt_t, tgt_sm):
                i = int(np.argmin(np.abs(tr.times - t)))
                assert tr.times[i] == t
                npt.assert_array_equal(tr.sm[i], v)

    def test_n_is_uniform_chi_squared(self):
        ds = gen_sines(1, 1, 50, seed=0)
        tr = ds.trajectories[0]
        rng = np.random.default_rng(2024)
        counts = np.zeros(5)
        draws = 10000
        for _ in range(draws):
            obs, _, _ = sample_obs_targets(tr, 5, 1, rng)
            counts[len(obs) - 1] += 1
        expected = draws / 5
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        assert chi2 < CHI2_99_DF4

    def test_bounds_validation(self):
        ds = gen_sines(1, 1, 10, seed=0)
        with pytest.raises(ValueError):
            sample_obs_targets(ds.trajectories[0], 11, 1, np.random.default_rng(0))


class TestSampleBatch:
    def test_shapes_and_shared_counts(self):
        ds = gen_sines(2, 3, 40, seed=0)
        obs_t, obs_sm, tgt_t, tgt_sm = sample_batch(ds, 6, 4, 5, np.random.default_rng(1))
        b, n = obs_t.shape
        m = tgt_t.shape[1]
        assert b == 6 and 1 <= n <= 4 and 1 <= m <= 5
        assert obs_sm.shape == (6, n, 1)
        assert tgt_sm.shape == (6, m, 1)

    def test_determinism(self):
        ds = gen_sines(1, 4, 30, seed=0)
        a = sample_batch(ds, 3, 3, 3, np.random.default_rng(42))
        b = sample_batch(ds, 3, 3, 3, np.random.default_rng(42))
        for x, y in zip(a, b):
            npt.assert_array_equal(x, y)


class TestNormalization:
    def test_round_trip_identity(self):
        ds = gen_obstacle_pair(T=60, seed=1)[0]
        # scale values away from [-1, 1] to exercise normalization
        scaled = Dataset(
            [Trajectory(tr.times, tr.sm * 3.7 + 1.2, tr.id) for tr in ds.trajectories],
            dm=2)
        normed = scaled.normalized()
        assert np.all(np.abs(normed.sm_stack()) <= 1.0 + 1e-12)
        back = normed.denormalized()
        for tr0, tr1 in zip(scaled.trajectories, back.trajectories):
            npt.assert_allclose(tr1.sm, tr0.sm, atol=1e-12)


class TestCsvRoundTrip:
    def test_save_load_equal(self, tmp_path):
        ds = gen_sines(2, 3, 25, seed=9)
        path = tmp_path / "ds.csv"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert back.dm == ds.dm and len(back) == len(ds)
        for a, b in zip(ds.trajectories, back.trajectories):
            assert a.id == b.id
            npt.assert_array_equal(a.times, b.times)
            npt.assert_array_equal(a.sm, b.sm)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DatasetParseError, match="no trajectories"):
            load_dataset(path)

    def test_header_only(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("traj_id,t,sm_0\n")
        with pytest.raises(DatasetParseError, match="no trajectories"):
            load_dataset(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,value\n0,1\n")
        with pytest.raises(DatasetParseError, match="row 1"):
            load_dataset(path)

    def test_nan_cell_names_position(self, tmp_path):
        path = tmp_path / "nan.csv"
        path.write_text("traj_id,t,sm_0\na,0.0,0.0\na,0.5,nan\na,1.0,0.5\n")
        with pytest.raises(DatasetParseError, match="row 3, column sm_0"):
            load_dataset(path)

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("traj_id,t,sm_0\na,0.0,0.0\na,0.5\n")
        with pytest.raises(DatasetParseError, match="row 3"):
            load_dataset(path)

    def test_non_monotone_times(self, tmp_path):
        path = tmp_path / "mono.csv"
        path.write_text("traj_id,t,sm_0\na,0.0,0.0\na,0.5,0.1\na,0.4,0.2\n")
        with pytest.raises(DatasetParseError, match="row 4"):
            load_dataset(path)

    def test_non_contiguous_trajectory(self, tmp_path):
        path = tmp_path / "split.csv"
        path.write_text("traj_id,t,sm_0\n"
                        "a,0.0,0.0\na,1.0,0.1\n"
                        "b,0.0,0.0\nb,1.0,0.1\n"
                        "a,2.0,0.2\n")
        with pytest.raises(DatasetParseError, match="not contiguous"):
            load_dataset(path)


class TestObservationSet:
    def test_rejects_duplicate_times(self):
        with pytest.raises(ValueError):
            ObservationSet([0.1, 0.1], [[0.0], [1.0]])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ObservationSet([], np.zeros((0, 1)))
