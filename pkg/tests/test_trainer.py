import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachcas.nnet import dumps, evaluate
from reachcas.trainer import TrainConfig, TrainingDiverged, asymmetric_loss, loss_gradient, policy_agreement, train


class TestLoss:
    def test_zero_error(self):
        assert asymmetric_loss(np.zeros(9), 3) == 0.0

    def test_overestimated_suboptimal(self):
        e = np.zeros(9)
        e[2] = 1.0
        assert asymmetric_loss(e, 0) == pytest.approx(80 / 9, rel=1e-15)

    def test_underestimated_best(self):
        e = np.zeros(9)
        e[0] = -1.0
        assert asymmetric_loss(e, 0) == pytest.approx(640 / 9, rel=1e-15)

    @pytest.mark.parametrize("idx, err, best", [(2, -1.0, 0), (0, 1.0, 0)])
    def test_mild_cases_are_squared_error(self, idx, err, best):
        e = np.zeros(9)
        e[idx] = err
        assert asymmetric_loss(e, best) == pytest.approx(1 / 9, rel=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=9, max_size=9), st.integers(0, 8))
    def test_at_least_mse(self, e, best):
        e = np.array(e)
        assert asymmetric_loss(e, best) >= np.mean(e * e) - 1e-12

    def test_batch_mean(self):
        rng = np.random.default_rng(0)
        e = rng.normal(size=(4, 9))
        best = rng.integers(0, 9, 4)
        assert asymmetric_loss(e, best) == pytest.approx(np.mean([asymmetric_loss(r, b) for r, b in zip(e, best)]))


class TestGradient:
    def test_zero_at_kink(self):
        np.testing.assert_array_equal(loss_gradient(np.ones(9), np.ones(9), 0), np.zeros(9))

    def test_positive_for_overestimated_suboptimal(self):
        pred, tgt = np.zeros(9), np.zeros(9)
        pred[4] = 0.3
        assert loss_gradient(pred, tgt, 0)[4] > 0

    def test_central_differences(self):
        rng = np.random.default_rng(1)
        h = 1e-6
        for _ in range(100):
            pred, tgt = rng.normal(size=(2, 9))
            # stay away from the kinks at e == 0
            pred += np.sign(pred - tgt) * 0.01
            best = int(rng.integers(9))
            g = loss_gradient(pred, tgt, best)
            fd = np.empty(9)
            for i in range(9):
                d = np.zeros(9)
                d[i] = h
                fd[i] = (asymmetric_loss(pred + d - tgt, best) - asymmetric_loss(pred - d - tgt, best)) / (2 * h)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-9)


def toy_data(rng, n=400):
    x = rng.uniform(-1, 1, (n, 2))
    y = np.stack([x[:, 0], -x[:, 0], x[:, 1] * 0.5], axis=1)
    return x, y


class TestTrain:
    def test_seeded_determinism(self):
        x, y = toy_data(np.random.default_rng(2))
        cfg = TrainConfig(hidden=(8, 8), epochs=20, batch_size=64, seed=5)
        assert dumps(train(x, y, cfg).network) == dumps(train(x, y, cfg).network)
        other = TrainConfig(hidden=(8, 8), epochs=20, batch_size=64, seed=6)
        assert dumps(train(x, y, other).network) != dumps(train(x, y, cfg).network)

    def test_single_record_fit(self):
        x = np.array([[0.3, -0.2]])
        y = np.array([[1.0, -2.0, 0.5]])
        res = train(x, y, TrainConfig(hidden=(10,), epochs=4000, batch_size=1, lr=1e-3, seed=0))
        net = res.network
        norm = (evaluate(net, x) - net.output_mean) / net.output_range
        np.testing.assert_allclose(norm, (y - net.output_mean) / net.output_range, atol=1e-2)

    def test_loss_trace_decreases(self):
        x, y = toy_data(np.random.default_rng(3), 1000)
        losses = np.array(train(x, y, TrainConfig(hidden=(16, 16), epochs=300, batch_size=128, seed=1)).losses)
        for start in range(0, len(losses) - 50, 50):
            assert losses[start + 50] <= losses[start] * 1.05

    def test_policy_agreement(self):
        x, y = toy_data(np.random.default_rng(4), 2000)
        net = train(x, y, TrainConfig(hidden=(16, 16), epochs=200, batch_size=128, seed=2)).network
        assert policy_agreement(net, x, y) > 0.9

    def test_normalization_from_data(self):
        x, y = toy_data(np.random.default_rng(5))
        net = train(x, y, TrainConfig(hidden=(4,), epochs=1)).network
        np.testing.assert_allclose(net.input_mean, x.mean(axis=0))
        np.testing.assert_allclose(net.input_range, x.max(axis=0) - x.min(axis=0))
        assert net.output_mean == pytest.approx(y.mean())

    def test_divergence_reported(self):
        x, y = toy_data(np.random.default_rng(6))
        with pytest.raises(TrainingDiverged):
            train(x, y, TrainConfig(hidden=(4,), epochs=3, lr=1e200))

    def test_bad_dataset(self):
        with pytest.raises(ValueError):
            train(np.zeros((0, 2)), np.zeros((0, 3)))
        with pytest.raises(ValueError):
            train(np.zeros((2, 2)), np.array([[0, np.nan, 0], [0, 0, 0]]))
