import hashlib
from pathlib import Path

import numpy as np
import pytest

from reachcas.mdp import ContractError
from reachcas.nnet import Network, NnetParseError, dumps, evaluate, load, loads, save

FIXTURE = Path(__file__).parent / "fixtures" / "reference.nnet"
FIXTURE_SHA256 = "c394945818631effe2805e714807d79366c0ced11ce99fcef7f991c7fa2b5e0b"


def identity_norm(n):
    return dict(input_min=[-1e9] * n, input_max=[1e9] * n, input_mean=[0.0] * n, input_range=[1.0] * n)


def random_net(rng, sizes=(3, 25, 25, 25, 25, 25, 9)):
    W = [rng.normal(size=(sizes[i + 1], sizes[i])) / np.sqrt(sizes[i]) for i in range(len(sizes) - 1)]
    B = [rng.normal(size=sizes[i + 1]) * 0.1 for i in range(len(sizes) - 1)]
    n = sizes[0]
    return Network(W, B, -np.ones(n) * 5, np.ones(n) * 5, rng.normal(size=n), rng.uniform(1, 3, n),
                   float(rng.normal()), float(rng.uniform(0.5, 2)))


def reference_eval(net, x):
    """Straightforward per-layer loop written independently of evaluate()."""
    v = [(min(max(xi, lo), hi) - m) / r for xi, lo, hi, m, r in
         zip(x, net.input_min, net.input_max, net.input_mean, net.input_range)]
    for li, (w, b) in enumerate(zip(net.weights, net.biases)):
        out = []
        for row, bi in zip(w.tolist(), b.tolist()):
            z = sum(a * c for a, c in zip(row, v)) + bi
            out.append(z if li == len(net.weights) - 1 else max(z, 0.0))
        v = out
    return np.array(v) * net.output_range + net.output_mean


class TestEvaluate:
    def test_identity_relu(self):
        eye = np.eye(2)
        net = Network([eye, eye], [np.zeros(2), np.zeros(2)], **identity_norm(2))
        np.testing.assert_array_equal(evaluate(net, [1.0, -1.0]), [1.0, 0.0])

    def test_zero_weights_give_bias(self):
        net = Network([np.zeros((4, 2)), np.zeros((3, 4))], [np.ones(4), np.array([3.0, 1, 1])],
                      **identity_norm(2), output_mean=2.0, output_range=0.5)
        np.testing.assert_array_equal(evaluate(net, [7.0, 8.0]), [3.5, 2.5, 2.5])

    def test_matches_reference(self):
        rng = np.random.default_rng(0)
        net = random_net(rng)
        xs = rng.uniform(-6, 6, size=(100, 3))
        batch = evaluate(net, xs)
        for x, got in zip(xs, batch):
            np.testing.assert_allclose(got, reference_eval(net, x), rtol=1e-6, atol=1e-9)
            np.testing.assert_allclose(evaluate(net, x), got, rtol=1e-12)

    def test_dimension_mismatch(self):
        net = random_net(np.random.default_rng(1))
        with pytest.raises(ContractError):
            evaluate(net, [1.0, 2.0])

    def test_piecewise_linear(self):
        rng = np.random.default_rng(2)
        net = random_net(rng)
        for _ in range(50):
            x, d = rng.uniform(-3, 3, 3), rng.normal(size=3)
            t = 1e-7
            f = [evaluate(net, x + k * t * d) for k in range(3)]
            # second difference vanishes unless a ReLU switches between the points
            if np.abs(f[2] - 2 * f[1] + f[0]).max() > 1e-9:
                continue
            np.testing.assert_allclose(f[1] - f[0], f[2] - f[1], atol=1e-9)

    def test_output_scaling(self):
        rng = np.random.default_rng(3)
        net = random_net(rng)
        x = rng.uniform(-2, 2, (20, 3))
        base = evaluate(net, x) - net.output_mean
        net.weights[-1] = net.weights[-1] * 3.0
        net.biases[-1] = net.biases[-1] * 3.0
        np.testing.assert_allclose(evaluate(net, x) - net.output_mean, 3.0 * base, rtol=1e-12, atol=1e-12)

    def test_inputs_clamped_to_declared_range(self):
        net = random_net(np.random.default_rng(4))
        np.testing.assert_array_equal(evaluate(net, [50.0, -50.0, 0.0]), evaluate(net, [5.0, -5.0, 0.0]))

    def test_invalid_networks(self):
        with pytest.raises(ContractError):
            Network([np.eye(2), np.eye(3)], [np.zeros(2), np.zeros(3)], **identity_norm(2))
        bad = identity_norm(2)
        bad["input_range"] = [1.0, 0.0]
        with pytest.raises(ContractError):
            Network([np.eye(2)], [np.zeros(2)], **bad)
        with pytest.raises(ContractError):
            Network([np.array([[np.nan]])], [np.zeros(1)], **identity_norm(1))


class TestFormat:
    def test_round_trip_exact(self, tmp_path):
        net = random_net(np.random.default_rng(5))
        net.header = "seed=5"
        save(net, tmp_path / "a.nnet")
        back = load(tmp_path / "a.nnet")
        for a, b in zip(net.weights + net.biases, back.weights + back.biases):
            np.testing.assert_array_equal(a, b)
        assert back.output_mean == net.output_mean and back.header == "seed=5"
        save(back, tmp_path / "b.nnet")
        assert (tmp_path / "a.nnet").read_bytes() == (tmp_path / "b.nnet").read_bytes()

    def test_truncated(self):
        text = dumps(random_net(np.random.default_rng(6)))
        with pytest.raises(NnetParseError, match="end of file"):
            loads("\n".join(text.splitlines()[:-3]))

    def test_bad_number_names_line(self):
        lines = dumps(random_net(np.random.default_rng(7))).splitlines()
        lines[4] = "1.0,abc,2.0,"
        with pytest.raises(NnetParseError, match="line 5"):
            loads("\n".join(lines))

    def test_non_finite_rejected(self):
        lines = dumps(random_net(np.random.default_rng(8))).splitlines()
        lines[9] = "nan," + lines[9].split(",", 1)[1]
        with pytest.raises(NnetParseError, match="line 10"):
            loads("\n".join(lines))

    def test_inconsistent_dimensions(self):
        lines = dumps(random_net(np.random.default_rng(9))).splitlines()
        lines[3] = "0.0,0.0,"
        with pytest.raises(NnetParseError, match="line 4"):
            loads("\n".join(lines))

    def test_reference_fixture(self):
        assert hashlib.sha256(FIXTURE.read_bytes()).hexdigest() == FIXTURE_SHA256
        net = load(FIXTURE)
        assert net.layer_sizes == [3, 6, 6, 4]
        assert net.output_range == 2.0
        assert dumps(net) == FIXTURE.read_text()
