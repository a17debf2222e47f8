import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polywave.activations import ACTIVATIONS, get_activation, softmax
from polywave.layers import (Conv1D, Dense, Flatten, InitSpec, MaxPool2, PnnLayer, UpSample2, glorot_limit,
                             init_layer, pnn_backward, pnn_forward)
from polywave.tensor import ShapeError, full_corr_flipped

from reference import conv_layer_backward, conv_layer_forward, pnn_neuron_forward


def random_layer(rng, n_prev, n, k, degree, act="tanh", padding="valid"):
    layer = PnnLayer(n_prev, n, k, degree, act, padding)
    layer.weights[...] = rng.standard_normal(layer.weights.shape)
    layer.biases[...] = rng.standard_normal(layer.biases.shape)
    return layer


class TestPnnForward:
    def test_hand_evaluated_degree_two(self):
        layer = PnnLayer(1, 1, 1, 2, "identity")
        layer.weights[0, 0, :, 0] = [1.0, 0.5]
        x, y, _ = pnn_forward(layer, np.array([[1.0, 2.0]]))
        np.testing.assert_array_equal(x, [[1.5, 4.0]])
        np.testing.assert_array_equal(y, [[1.5, 4.0]])

    def test_zero_input_isolates_bias(self):
        layer = random_layer(np.random.default_rng(0), 2, 3, 4, 3)
        layer.biases[...] = 0.3
        _, y, _ = pnn_forward(layer, np.zeros((2, 10)))
        np.testing.assert_allclose(y, np.tanh(0.3), rtol=0, atol=0)

    @pytest.mark.parametrize("degree", [1, 2, 3])
    def test_shared_power_cache_matches_per_neuron_recompute(self, degree):
        rng = np.random.default_rng(degree)
        layer = random_layer(rng, 3, 4, 5, degree, "identity")
        y_prev = rng.uniform(-1, 1, (3, 12))
        x, _, _ = pnn_forward(layer, y_prev)
        for i in range(4):
            np.testing.assert_allclose(x[i], pnn_neuron_forward(layer.weights[i], layer.biases[i], y_prev),
                                       rtol=1e-12, atol=1e-12)

    def test_same_padding_keeps_length_and_pads_symmetrically(self):
        rng = np.random.default_rng(1)
        layer = random_layer(rng, 1, 2, 4, 2, "identity", padding="same")
        y_prev = rng.standard_normal((1, 9))
        x, _, _ = pnn_forward(layer, y_prev)
        assert x.shape == (2, 9)
        valid = random_layer(rng, 1, 2, 4, 2, "identity")
        valid.weights[...] = layer.weights
        valid.biases[...] = layer.biases
        x_ref, _, _ = pnn_forward(valid, np.pad(y_prev, ((0, 0), (1, 2))))
        np.testing.assert_array_equal(x, x_ref)

    def test_rejects_wrong_channel_count(self):
        with pytest.raises(ShapeError):
            PnnLayer(2, 1, 3).forward(np.zeros((1, 3, 10)))

    def test_rejects_kernel_longer_than_input(self):
        with pytest.raises(ShapeError):
            PnnLayer(1, 1, 5).forward(np.zeros((1, 1, 4)))

    def test_param_count_law(self):
        for n_prev, n, k, d in [(1, 12, 49, 1), (12, 24, 13, 2), (3, 5, 7, 5)]:
            assert PnnLayer(n_prev, n, k, d).param_count == n * n_prev * k * d + n


class TestDegreeOneReduction:
    """A D=1 layer against the loop-based plain convolution in ``reference``."""

    @pytest.mark.parametrize("seed", range(10))
    def test_forward_and_gradients_match_plain_conv(self, seed):
        rng = np.random.default_rng(seed)
        n_prev, n, k = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 6)
        m = k + rng.integers(0, 10)
        act = get_activation(["tanh", "softsign", "sigmoid", "identity", "swish"][seed % 5])
        layer = random_layer(rng, n_prev, n, k, 1, act.name)
        y_prev = rng.standard_normal((n_prev, m))
        x, y, cache = pnn_forward(layer, y_prev)
        x_ref, y_ref = conv_layer_forward(layer.weights[:, :, 0, :], layer.biases, y_prev, act)
        np.testing.assert_allclose(x, x_ref, rtol=0, atol=1e-12)
        np.testing.assert_allclose(y, y_ref, rtol=0, atol=1e-12)
        grad_y = rng.standard_normal(y.shape)
        dw, db, dy = pnn_backward(layer, cache, grad_y)
        dw_ref, db_ref, dy_ref = conv_layer_backward(layer.weights[:, :, 0, :], y_prev, grad_y * act.deriv(x_ref))
        np.testing.assert_allclose(dw[:, :, 0, :], dw_ref, rtol=0, atol=1e-12)
        np.testing.assert_allclose(db, db_ref, rtol=0, atol=1e-12)
        np.testing.assert_allclose(dy, dy_ref, rtol=0, atol=1e-12)

    def test_conv1d_is_degree_one_pnn(self):
        layer = Conv1D(2, 3, 4, "tanh")
        assert isinstance(layer, PnnLayer) and layer.degree == 1 and layer.kind == "conv"


class TestPnnBackward:
    def test_zero_upstream_gradient(self):
        rng = np.random.default_rng(0)
        layer = random_layer(rng, 2, 3, 3, 3)
        _, y, cache = pnn_forward(layer, rng.standard_normal((2, 8)))
        dw, db, dy = pnn_backward(layer, cache, np.zeros_like(y))
        assert not dw.any() and not db.any() and not dy.any()

    @pytest.mark.parametrize("degree", [2, 3, 5])
    def test_input_gradient_sums_power_rule(self, degree):
        # dE/dY_prev = sum_d d * (full corr of dX with W_d) * Y_prev ** (d - 1)
        rng = np.random.default_rng(degree)
        layer = random_layer(rng, 2, 2, 3, degree, "identity")
        y_prev = rng.uniform(-1, 1, (2, 7))
        _, y, cache = pnn_forward(layer, y_prev)
        g = rng.standard_normal(y.shape)
        _, _, dy = pnn_backward(layer, cache, g)
        expected = np.zeros_like(y_prev)
        for i in range(2):
            for j in range(2):
                for d in range(1, degree + 1):
                    expected[j] += d * full_corr_flipped(g[i], layer.weights[i, j, d - 1]) * y_prev[j] ** (d - 1)
        np.testing.assert_allclose(dy, expected, rtol=1e-12, atol=1e-12)


class TestAuxLayers:
    def test_maxpool_forward_backward(self):
        pool = MaxPool2()
        out, cache = pool.forward(np.array([[[1.0, 3.0, 2.0, 2.0]]]))
        np.testing.assert_array_equal(out, [[[3.0, 2.0]]])
        _, g = pool.backward(cache, np.array([[[1.0, 1.0]]]))
        np.testing.assert_array_equal(g, [[[0.0, 1.0, 1.0, 0.0]]])

    def test_upsample(self):
        up = UpSample2()
        out, cache = up.forward(np.array([[[1.0, 2.0]]]))
        np.testing.assert_array_equal(out, [[[1.0, 1.0, 2.0, 2.0]]])
        _, g = up.backward(cache, np.ones((1, 1, 4)))
        np.testing.assert_array_equal(g, [[[2.0, 2.0]]])

    def test_flatten_round_trip(self):
        flat = Flatten()
        a = np.arange(6.0).reshape(1, 2, 3)
        out, cache = flat.forward(a)
        assert out.shape == (1, 6)
        _, back = flat.backward(cache, out)
        np.testing.assert_array_equal(back, a)

    def test_dense_matches_matrix_product(self):
        rng = np.random.default_rng(0)
        layer = Dense(4, 3, "identity")
        layer.weights[...] = rng.standard_normal((3, 4))
        layer.biases[...] = rng.standard_normal(3)
        a = rng.standard_normal((2, 4))
        out, _ = layer.forward(a)
        np.testing.assert_allclose(out, a @ layer.weights.T + layer.biases)

    def test_aux_layers_have_no_parameters(self):
        assert MaxPool2().param_count == UpSample2().param_count == Flatten().param_count == 0


class TestInit:
    def test_degree_one_slab_is_plain_glorot(self):
        layer = init_layer(InitSpec(seed=3), PnnLayer(4, 8, 5, 1))
        limit = glorot_limit(4 * 5, 8 * 5)
        assert np.abs(layer.weights).max() <= limit
        assert np.abs(layer.weights).max() > 0.9 * limit

    def test_degree_three_slab_bounds_divided_by_six(self):
        layer = init_layer(InitSpec(seed=4), PnnLayer(8, 16, 9, 3))
        limit = glorot_limit(8 * 9, 16 * 9)
        for d in range(3):
            slab = np.abs(layer.weights[:, :, d, :])
            bound = limit / math.factorial(d + 1)
            assert slab.max() <= bound
            assert slab.max() > 0.95 * bound

    def test_unscaled_option(self):
        layer = init_layer(InitSpec(seed=4, degree_scaling=False), PnnLayer(8, 16, 9, 3))
        limit = glorot_limit(8 * 9, 16 * 9)
        assert np.abs(layer.weights[:, :, 2, :]).max() > 0.95 * limit

    def test_biases_start_at_zero(self):
        assert not init_layer(InitSpec(seed=1), PnnLayer(2, 3, 4, 2)).biases.any()

    def test_same_seed_same_weights(self):
        a = init_layer(InitSpec(seed=7), PnnLayer(2, 3, 4, 2))
        b = init_layer(InitSpec(seed=7), PnnLayer(2, 3, 4, 2))
        np.testing.assert_array_equal(a.weights, b.weights)


class TestActivations:
    xs = np.linspace(-30, 30, 601)

    def test_bounded_ranges(self):
        for name in ("tanh", "softsign"):
            y = ACTIVATIONS[name](np.linspace(-5, 5, 101))
            assert np.all(np.abs(y) < 1)
        y = ACTIVATIONS["sigmoid"](np.linspace(-30, 30, 101))
        assert np.all((y > 0) & (y < 1))

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 20))
    def test_softmax_rows_sum_to_one(self, seed, width):
        x = np.random.default_rng(seed).normal(0, 50, (5, width))
        np.testing.assert_allclose(softmax(x).sum(axis=-1), 1.0, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("name", ["tanh", "softsign", "relu", "swish", "sigmoid", "identity"])
    def test_derivatives_match_central_differences(self, name):
        act = ACTIVATIONS[name]
        x = np.linspace(-4, 4, 81) + 0.0123  # keep relu away from its kink
        h = 1e-6
        numeric = (act.fn(x + h) - act.fn(x - h)) / (2 * h)
        np.testing.assert_allclose(act.deriv(x), numeric, rtol=1e-6, atol=1e-9)

    def test_sigmoid_is_overflow_safe(self):
        with np.errstate(over="raise"):
            y = ACTIVATIONS["sigmoid"](np.array([-1000.0, 1000.0]))
        np.testing.assert_array_equal(y, [0.0, 1.0])

    def test_unknown_activation(self):
        with pytest.raises(ValueError):
            get_activation("gelu")
