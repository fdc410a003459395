import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from brainnet_moe.errors import NumericalError, ShapeError
from brainnet_moe.nn import (DenseLayer, LayerNorm, OptimizerState, Tensor, TransformerLayer, adamw_step,
                             attention, cross_entropy, dense_forward, gelu, grad_check, matmul, no_grad,
                             softmax)
from brainnet_moe.nn.gradcheck import sample_coordinates
from brainnet_moe.nn.serialization import load_tensors, save_tensors
from brainnet_moe.errors import CorruptCheckpointError

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


def _layer(weight, bias):
    layer = DenseLayer(len(weight[0]), len(weight), np.random.default_rng(0))
    layer.weight.data[...] = weight
    layer.bias.data[...] = bias
    return layer


class TestDense:
    def test_identity(self):
        out = dense_forward(_layer([[1, 0], [0, 1]], [0, 0]), Tensor([[1.0, 2.0]]))
        np.testing.assert_array_equal(out.data, [[1, 2]])

    def test_constant(self):
        out = dense_forward(_layer([[0, 0]], [3]), Tensor([[5.0, -7.0]]))
        np.testing.assert_array_equal(out.data, [[3]])

    def test_dot(self):
        out = dense_forward(_layer([[1, 1]], [0]), Tensor([[2.0, 3.0]]))
        np.testing.assert_array_equal(out.data, [[5]])

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            dense_forward(_layer([[1, 1]], [0]), Tensor([[1.0, 2.0, 3.0]]))

    def test_glorot_bounds(self):
        layer = DenseLayer(30, 20, np.random.default_rng(0))
        limit = math.sqrt(6 / 50)
        assert np.abs(layer.weight.data).max() <= limit
        assert not layer.bias.data.any()


class TestActivations:
    def test_gelu_points(self):
        out = gelu(Tensor([0.0, 10.0, -10.0])).data
        assert out[0] == 0.0
        assert abs(out[1] - 10) < 1e-6
        assert abs(out[2]) < 1e-6

    def test_softmax_uniform(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)

    def test_softmax_ln2(self):
        np.testing.assert_allclose(softmax(Tensor([math.log(2), 0.0, 0.0])).data, [0.5, 0.25, 0.25],
                                   atol=1e-12)

    def test_softmax_no_overflow(self):
        out = softmax(Tensor([1000.0, 0.0])).data
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-9)

    @given(arrays(np.float64, (4, 5), elements=finite))
    def test_softmax_simplex(self, x):
        p = softmax(Tensor(x), axis=-1).data
        assert np.all(p > 0)
        np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-9)

    def test_layer_norm_standardizes(self):
        x = np.random.default_rng(0).standard_normal((3, 16)) * 5 + 2
        out = LayerNorm(16)(Tensor(x)).data
        np.testing.assert_allclose(out.mean(-1), 0, atol=1e-12)
        np.testing.assert_allclose(out.std(-1), 1, atol=1e-3)


class TestAttention:
    def test_single_token(self):
        rng = np.random.default_rng(0)
        q, k, v = (Tensor(rng.standard_normal((1, 4))) for _ in range(3))
        np.testing.assert_array_equal(attention(q, k, v, 4).data, v.data)

    def test_zero_keys_average(self):
        rng = np.random.default_rng(1)
        v = rng.standard_normal((3, 2))
        out = attention(Tensor(rng.standard_normal((3, 2))), Tensor(np.zeros((3, 2))), Tensor(v), 2).data
        np.testing.assert_allclose(out, np.tile(v.mean(0), (3, 1)), atol=1e-15)

    def test_two_by_two_by_hand(self):
        q = np.array([[1.0, 0.0], [0.0, 1.0]])
        k = np.array([[1.0, 1.0], [0.0, 2.0]])
        v = np.array([[1.0, 2.0], [3.0, 4.0]])
        expected = []
        for i in range(2):
            s = [sum(q[i][t] * k[j][t] for t in range(2)) / math.sqrt(2) for j in range(2)]
            e = [math.exp(z) for z in s]
            w = [z / sum(e) for z in e]
            expected.append([w[0] * v[0][c] + w[1] * v[1][c] for c in range(2)])
        np.testing.assert_allclose(attention(Tensor(q), Tensor(k), Tensor(v), 2).data, expected, atol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            attention(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 3))), 3)

    @given(arrays(np.float64, (3, 5, 4), elements=st.floats(-5, 5)))
    @settings(max_examples=30)
    def test_output_in_value_hull(self, qkv):
        q, k, v = qkv[0], qkv[1], qkv[2]
        out = attention(Tensor(q), Tensor(k), Tensor(v), 4).data
        assert np.all(out >= v.min(0) - 1e-12)
        assert np.all(out <= v.max(0) + 1e-12)


class TestCrossEntropy:
    def test_uniform(self):
        assert abs(float(cross_entropy(Tensor(np.zeros((2, 3))), [0, 2]).data) - math.log(3)) < 1e-12

    def test_confident(self):
        assert float(cross_entropy(Tensor([[1000.0, 0.0, 0.0]]), [0]).data) < 1e-12

    def test_mixed_by_hand(self):
        logits = [[1.0, 2.0], [0.5, -0.5]]
        by_hand = []
        for row, y in zip(logits, [0, 1]):
            z = sum(math.exp(v) for v in row)
            by_hand.append(-math.log(math.exp(row[y]) / z))
        got = float(cross_entropy(Tensor(logits), [0, 1]).data)
        assert abs(got - sum(by_hand) / 2) < 1e-12

    def test_label_range(self):
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros((1, 3))), [3])


class TestAdamW:
    def test_zero_grad_no_decay_fixed_point(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        state = OptimizerState.for_params([p], weight_decay=0.0)
        adamw_step([p], [np.zeros(2)], state)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert state.step == 1

    def test_first_step_is_signed_lr(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        state = OptimizerState.for_params([p], lr=1e-3, weight_decay=0.0)
        g = np.array([0.5, -2.0, 1e-3])
        adamw_step([p], [g], state)
        # bias-corrected m/sqrt(v) = g/|g| up to eps
        np.testing.assert_allclose(p.data, -1e-3 * np.sign(g) * np.abs(g) / (np.abs(g) + 1e-8), rtol=1e-12)

    def test_decoupled_decay(self):
        p = Tensor(np.array([2.0, -4.0]), requires_grad=True)
        state = OptimizerState.for_params([p], lr=0.1, weight_decay=0.5)
        adamw_step([p], [np.zeros(2)], state)
        np.testing.assert_allclose(p.data, np.array([2.0, -4.0]) * (1 - 0.05), rtol=1e-15)

    @given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite))
    def test_zero_lr_identity(self, w, g):
        p = Tensor(w.copy(), requires_grad=True)
        adamw_step([p], [g], OptimizerState.for_params([p], lr=0.0))
        np.testing.assert_array_equal(p.data, w)


class TestAutodiff:
    def test_quadratic(self):
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (w * w).sum().backward()
        np.testing.assert_array_equal(w.grad, [2.0, 4.0])
        assert grad_check(lambda: (w * w).sum(), [w], n_samples=2) < 1e-7

    def test_constant_function(self):
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        err, details = grad_check(lambda: (w * 0.0).sum() + 3.0, [w], n_samples=2, return_details=True)
        assert err == 0.0
        assert all(abs(a) < 1e-12 and abs(n) < 1e-12 for _, _, a, n, _ in details)

    def test_every_op_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)

        def f():
            h = matmul(a, b).tanh() + a.sum(axis=1, keepdims=True).sqrt().log()
            h = h.gelu() * h.sigmoid() + h.softplus() / (h.exp() + 1.0)
            h = h.softmax(-1) * h.abs() + (h ** 2).cumsum(-1) - h.max(axis=-1, keepdims=True)
            return h.log_softmax(-1).mean() + h.T.reshape(-1)[::3].sum()

        assert grad_check(f, [a, b], n_samples=20) < 1e-6

    def test_transformer_layer_gradients(self):
        rng = np.random.default_rng(0)
        layer = TransformerLayer(8, rng, n_heads=2)
        x = Tensor(rng.standard_normal((2, 5, 8)), requires_grad=True)
        err = grad_check(lambda: (layer(x) ** 2).mean(), [x, *layer.parameters()], n_samples=100)
        assert err < 1e-4

    def test_non_finite_is_error(self):
        with pytest.raises(NumericalError):
            Tensor([-1.0]).log()

    def test_no_grad_records_nothing(self):
        w = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            y = (w * 2).sum()
        assert not y.requires_grad

    def test_coordinate_sampling_covers_each_tensor(self):
        params = [Tensor(np.zeros(500)), Tensor(np.zeros(1)), Tensor(np.zeros((3, 3)))]
        coords = sample_coordinates(params, 100, np.random.default_rng(0))
        assert len(coords) == 100
        assert {i for i, _ in coords} == {0, 1, 2}
        assert len(set(coords)) == 100


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        a = np.random.default_rng(0).standard_normal((3, 2))
        save_tensors(tmp_path / "ck", [("a.weight", a), ("b", np.arange(4.0))], {"k": 1})
        loaded, meta = load_tensors(tmp_path / "ck")
        assert loaded["a.weight"].tobytes() == a.tobytes()
        assert meta["k"] == 1

    def test_truncated_blob(self, tmp_path):
        save_tensors(tmp_path / "ck", [("a", np.ones(4))])
        blob = tmp_path / "ck" / "tensors.bin"
        blob.write_bytes(blob.read_bytes()[:-8])
        with pytest.raises(CorruptCheckpointError):
            load_tensors(tmp_path / "ck")
