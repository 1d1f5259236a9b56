"""Baseline model contracts: encoding, querying, loss, generation."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from cnep.data import ObservationSet, gen_sines
from cnep.models import CnmpModel
from cnep.training import TrainConfig, train
from oracles import random_scalar_batch, scalar_cnmp_loss

RAW_FOR_UNIT_SIGMA = 0.541324854612918


def small_model(seed=0, dm=1):
    return CnmpModel(dm=dm, latent_width=16, encoder_hidden=(12, 12),
                     query_hidden=(12, 12), seed=seed)


class TestEncode:
    def test_mean_of_one(self):
        m = small_model()
        obs = ObservationSet([0.3], [[0.7]])
        enc_in = np.array([[0.3, 0.7]])
        npt.assert_array_equal(m.encode(obs), m.encoder.forward(enc_in)[0])

    def test_permutation_invariance_exact(self):
        m = small_model(3)
        obs = ObservationSet([0.1, 0.5, 0.9], [[0.2], [-0.3], [0.8]])
        flipped = ObservationSet([0.9, 0.5, 0.1], [[0.8], [-0.3], [0.2]])
        npt.assert_array_equal(m.encode(obs), m.encode(flipped))

    def test_duplicate_idempotence(self):
        # duplicated tuples average to the same latent as the single tuple
        m = small_model(5)
        single = ObservationSet([0.4], [[0.6]])
        r1 = m.encode(single)
        enc_in = np.array([[0.4, 0.6], [0.4, 0.6]])
        r2 = m.encoder.forward(enc_in).mean(axis=0)
        npt.assert_allclose(r2, r1, atol=1e-15)

    def test_empty_rejected(self):
        m = small_model()
        with pytest.raises(ValueError):
            ObservationSet(np.zeros(0), np.zeros((0, 1)))
        class Fake:
            times = np.zeros(0)
            values = np.zeros((0, 1))
            def __len__(self):
                return 0
        with pytest.raises(ValueError):
            m.encode(Fake())


class TestQuery:
    def test_deterministic(self):
        m = small_model(7)
        r = m.encode(ObservationSet([0.2], [[0.1]]))
        a = m.query(r, 0.6)
        b = m.query(r, 0.6)
        npt.assert_array_equal(a.mean, b.mean)
        npt.assert_array_equal(a.raw_scale, b.raw_scale)

    def test_zero_net_outputs(self):
        m = CnmpModel(dm=2, latent_width=4, encoder_hidden=(4,), query_hidden=(4,),
                      seed=0)
        m.store.values[:] = 0.0
        pred = m.query(np.zeros(4), 0.5)
        npt.assert_array_equal(pred.mean, [0.0, 0.0])
        npt.assert_allclose(pred.std, math.log(2.0), atol=1e-12)

    def test_output_width(self):
        m = small_model(dm=3)
        pred = m.query(m.encode(ObservationSet([0.5], [[0.0, 0.0, 0.0]])), 0.2)
        assert pred.mean.shape == (3,) and pred.raw_scale.shape == (3,)


class TestLoss:
    def test_perfect_prediction_unit_sigma(self):
        # craft a query net that outputs (target, raw-for-sigma-1) everywhere
        m = CnmpModel(dm=1, latent_width=4, encoder_hidden=(4,), query_hidden=(4,),
                      seed=0)
        m.store.values[:] = 0.0
        m.query_net.biases[-1].values[:] = [0.25, RAW_FOR_UNIT_SIGMA]
        batch = [(ObservationSet([0.1], [[0.25]]), [0.5, 0.9],
                  np.array([[0.25], [0.25]]))]
        assert m.loss(batch) == pytest.approx(0.9189385332046727, abs=1e-9)

    def test_batch_duplication_invariance(self):
        m = small_model(11)
        item = (ObservationSet([0.2, 0.7], [[0.3], [-0.4]]), [0.5], np.array([[0.1]]))
        single = m.loss([item])
        doubled = m.loss([item, item])
        assert doubled == pytest.approx(single, rel=1e-12)

    def test_scalar_loop_oracle(self):
        m = small_model(13)
        rng = np.random.default_rng(29)
        batch_lists = random_scalar_batch(rng, dm=1)
        batch = [(ObservationSet(ot, ov), tt, np.array(tv))
                 for ot, ov, tt, tv in batch_lists]
        assert m.loss(batch) == pytest.approx(
            scalar_cnmp_loss(m, batch_lists), abs=1e-10)

    def test_fast_path_matches_list_path(self):
        m = small_model(17)
        obs_t = np.array([[0.1, 0.6], [0.3, 0.9]])
        obs_sm = np.array([[[0.2], [-0.1]], [[0.5], [0.4]]])
        tgt_t = np.array([[0.25, 0.75], [0.5, 0.85]])
        tgt_sm = np.array([[[0.3], [-0.2]], [[0.6], [0.0]]])
        fast = m.loss_and_grad(obs_t, obs_sm, tgt_t, tgt_sm, want_grad=False)
        listed = m.loss([
            (ObservationSet(obs_t[i], obs_sm[i]), tgt_t[i], tgt_sm[i])
            for i in range(2)])
        assert fast.total == pytest.approx(listed, rel=1e-12)


class TestGenerate:
    def test_shapes_and_determinism(self):
        m = small_model(19)
        obs = ObservationSet([0.0], [[0.0]])
        times = np.linspace(0, 1, 37)
        g1 = m.generate(obs, times)
        g2 = m.generate(obs, times)
        assert g1.means.shape == (37, 1) and g1.stds.shape == (37, 1)
        npt.assert_array_equal(g1.means, g2.means)

    def test_single_latent_reused(self):
        m = small_model(23)
        obs = ObservationSet([0.3, 0.8], [[0.1], [0.9]])
        r = m.encode(obs)
        gen = m.generate(obs, [0.2, 0.4])
        for i, t in enumerate([0.2, 0.4]):
            pred = m.query(r, t)
            npt.assert_allclose(gen.means[i], pred.mean, rtol=1e-12, atol=1e-15)


class TestInterpolationFailure:
    def test_symmetric_modes_average_between(self):
        # two mirrored curves: conditioned at a shared zero, a trained
        # single-decoder model lands between the modes
        from cnep.data import Dataset, Trajectory
        times = np.linspace(0, 1, 60)
        up = Trajectory(times, np.sin(2 * np.pi * times), "up")
        down = Trajectory(times, -np.sin(2 * np.pi * times), "down")
        ds = Dataset([up, down], dm=1)
        m = CnmpModel(dm=1, latent_width=16, encoder_hidden=(16, 16),
                      query_hidden=(16, 16), seed=1)
        cfg = TrainConfig(batch_size=8, epochs=800, learning_rate=2e-3,
                          seed=1, validation_every=800, m_max=8)
        train(m, ds, cfg)
        gen = m.generate(ObservationSet([0.5], [[0.0]]), [0.25])
        assert abs(gen.means[0, 0]) < 1.0
