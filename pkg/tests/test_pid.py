"""PID refinement: exactness at conditioning points, locality, idempotence."""

import numpy as np
import numpy.testing as npt
import pytest

from cnep.data import ObservationSet
from cnep.errors import ConfigError
from cnep.pid import PidConfig, refine

T = 200
TIMES = np.linspace(0.0, 1.0, T)
BASE = np.stack([np.sin(2 * np.pi * TIMES), np.cos(2 * np.pi * TIMES)], axis=1)


def snap(t):
    return int(np.argmin(np.abs(TIMES - t)))


class TestExactness:
    def test_zero_error_is_identity(self):
        idx = snap(0.3)
        obs = ObservationSet([TIMES[idx]], [BASE[idx]])
        out = refine(TIMES, BASE, obs, PidConfig())
        npt.assert_array_equal(out, BASE)

    def test_single_step_proportional(self):
        # kp=1, ki=kd=0, window 1: only the snapped sample moves, by exactly e
        idx = snap(0.42)
        target = BASE[idx] + np.array([0.3, -0.2])
        obs = ObservationSet([TIMES[idx]], [target])
        cfg = PidConfig(kp=1.0, ki=0.0, kd=0.0, decay_window=1)
        out = refine(TIMES, BASE, obs, cfg)
        npt.assert_allclose(out[idx], target, atol=1e-12)
        mask = np.ones(T, dtype=bool)
        mask[idx] = False
        npt.assert_array_equal(out[mask], BASE[mask])

    def test_generic_config_meets_point_and_decays(self):
        idx = snap(0.5)
        target = BASE[idx] + np.array([0.4, 0.1])
        obs = ObservationSet([TIMES[idx]], [target])
        cfg = PidConfig()
        out = refine(TIMES, BASE, obs, cfg)
        npt.assert_allclose(out[idx], target, atol=1e-9)
        deltas = np.linalg.norm(out - BASE, axis=1)
        window = deltas[idx:idx + cfg.decay_window]
        assert np.all(np.diff(window) <= 1e-12)

    def test_every_point_met_on_random_cases(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            k = int(rng.integers(1, 5))
            idxs = np.sort(rng.choice(T, size=k, replace=False))
            targets = BASE[idxs] + rng.uniform(-0.5, 0.5, size=(k, 2))
            obs = ObservationSet(TIMES[idxs], targets)
            out = refine(TIMES, BASE, obs, PidConfig())
            for i, tgt in zip(idxs, targets):
                npt.assert_allclose(out[i], tgt, atol=1e-9)


class TestLocality:
    def test_untouched_outside_windows(self):
        rng = np.random.default_rng(23)
        cfg = PidConfig(decay_window=15)
        for _ in range(100):
            k = int(rng.integers(1, 4))
            idxs = np.sort(rng.choice(T, size=k, replace=False))
            targets = BASE[idxs] + rng.uniform(-0.5, 0.5, size=(k, 2))
            out = refine(TIMES, BASE, ObservationSet(TIMES[idxs], targets), cfg)
            covered = np.zeros(T, dtype=bool)
            for i in idxs:
                covered[i:i + cfg.decay_window] = True
            npt.assert_array_equal(out[~covered], BASE[~covered])


class TestIdempotence:
    def test_refine_twice_on_satisfied_constraints(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            k = int(rng.integers(1, 5))
            idxs = np.sort(rng.choice(T, size=k, replace=False))
            obs = ObservationSet(TIMES[idxs], BASE[idxs])
            once = refine(TIMES, BASE, obs, PidConfig())
            twice = refine(TIMES, once, obs, PidConfig())
            npt.assert_array_equal(once, BASE)
            npt.assert_array_equal(twice, once)

    def test_output_is_fixed_point(self):
        idx = snap(0.25)
        target = BASE[idx] + np.array([0.2, 0.3])
        obs = ObservationSet([TIMES[idx]], [target])
        once = refine(TIMES, BASE, obs, PidConfig())
        twice = refine(TIMES, once, obs, PidConfig())
        npt.assert_allclose(twice, once, atol=1e-12)


class TestSmoothness:
    def test_jump_growth_bounded_by_error(self):
        # refinement adds at most |e| to the largest step-to-step jump
        rng = np.random.default_rng(41)
        for _ in range(50):
            idx = int(rng.integers(0, T))
            err = rng.uniform(-0.6, 0.6, size=2)
            obs = ObservationSet([TIMES[idx]], [BASE[idx] + err])
            out = refine(TIMES, BASE, obs, PidConfig())
            jump_in = np.abs(np.diff(BASE, axis=0)).max()
            jump_out = np.abs(np.diff(out, axis=0)).max()
            assert jump_out <= jump_in + np.abs(err).max() + 1e-12


class TestValidation:
    def test_conditioning_time_outside_unit_interval(self):
        with pytest.raises(ValueError):
            refine(TIMES, BASE, ObservationSet([1.2], [[0.0, 0.0]]), PidConfig())

    def test_colliding_snap_indices(self):
        # distinct times that snap to the same grid sample are contradictory
        obs = ObservationSet([0.5, 0.5001], [[0.0, 0.0], [1.0, 1.0]])
        with pytest.raises(ValueError, match="same grid index"):
            refine(TIMES, BASE, obs, PidConfig())

    def test_window_longer_than_trajectory(self):
        with pytest.raises(ConfigError):
            refine(TIMES[:10], BASE[:10], ObservationSet([0.0], [[0.0, 0.0]]),
                   PidConfig(decay_window=20))

    def test_gain_validation(self):
        with pytest.raises(ConfigError):
            PidConfig(kp=-1.0)
        with pytest.raises(ConfigError):
            PidConfig(kp=0.0, ki=0.0, kd=0.0)

    def test_overlapping_windows_still_met_exactly(self):
        idx1, idx2 = 100, 105
        t1, t2 = TIMES[idx1], TIMES[idx2]
        targets = BASE[[idx1, idx2]] + np.array([[0.3, -0.1], [-0.2, 0.25]])
        obs = ObservationSet([t1, t2], targets)
        out = refine(TIMES, BASE, obs, PidConfig(decay_window=20))
        npt.assert_allclose(out[idx1], targets[0], atol=1e-9)
        npt.assert_allclose(out[idx2], targets[1], atol=1e-9)
