"""Layer forward/backward checks, including finite-difference gradients."""

import numpy as np
import pytest
from _oracles import numeric_grad

from heatcluster.micronet import Conv2D, Dense, Flatten, MaxPool2D, ReLU


def check_layer_gradients(layer, x, rng, rtol=1e-3):
    """Compare analytic gradients against central differences for a random
    linear functional of the layer output."""
    c = rng.normal(size=layer.forward(x).shape)

    def loss():
        return float((layer.forward(x) * c).sum())

    grad_x, param_grads = layer.backward(x, c)
    np.testing.assert_allclose(grad_x, numeric_grad(loss, x), rtol=rtol, atol=1e-6)
    for name, grad in param_grads.items():
        np.testing.assert_allclose(
            grad, numeric_grad(loss, getattr(layer, name)), rtol=rtol, atol=1e-6
        )


class TestDense:
    def test_forward_identity(self):
        layer = Dense(2, 2, weight=np.eye(2), bias=np.zeros(2))
        np.testing.assert_array_equal(layer.forward(np.array([[3.0, 5.0]])), [[3.0, 5.0]])

    def test_forward_affine(self):
        layer = Dense(2, 1, weight=[[2.0, -1.0]], bias=[0.5])
        np.testing.assert_allclose(layer.forward(np.array([[1.0, 3.0]])), [[-0.5]])

    def test_gradients(self):
        rng = np.random.default_rng(0)
        layer = Dense(5, 3)
        layer.init_params(rng)
        check_layer_gradients(layer, rng.normal(size=(4, 5)), rng)

    def test_bad_weight_shape(self):
        with pytest.raises(ValueError):
            Dense(2, 3, weight=np.zeros((2, 3)))


class TestConv2D:
    def test_forward_matches_direct_loops(self):
        rng = np.random.default_rng(1)
        layer = Conv2D(2, 3, 3, stride=2, padding=1)
        layer.init_params(rng)
        x = rng.normal(size=(2, 2, 7, 6))
        out = layer.forward(x)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        expected = np.zeros_like(out)
        for n in range(2):
            for oc in range(3):
                for oy in range(out.shape[2]):
                    for ox in range(out.shape[3]):
                        patch = xp[n, :, oy * 2 : oy * 2 + 3, ox * 2 : ox * 2 + 3]
                        expected[n, oc, oy, ox] = (patch * layer.weight[oc]).sum() + layer.bias[oc]
        np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
    def test_gradients(self, stride, padding):
        rng = np.random.default_rng(2)
        layer = Conv2D(2, 3, 3, stride=stride, padding=padding)
        layer.init_params(rng)
        check_layer_gradients(layer, rng.normal(size=(2, 2, 6, 6)), rng)

    def test_kernel_too_large(self):
        with pytest.raises(ValueError):
            Conv2D(1, 1, 5).out_shape((1, 3, 3))


class TestReLU:
    def test_forward(self):
        np.testing.assert_array_equal(
            ReLU().forward(np.array([[-1.0, 2.0]])), [[0.0, 2.0]]
        )

    def test_gradients(self):
        rng = np.random.default_rng(3)
        # Keep inputs away from the kink at zero.
        x = rng.normal(size=(3, 4))
        x[np.abs(x) < 0.05] = 0.1
        check_layer_gradients(ReLU(), x, rng)


class TestMaxPool2D:
    def test_forward(self):
        x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
        out = MaxPool2D(2).forward(x)
        np.testing.assert_array_equal(out[0, 0], [[5.0, 7.0], [13.0, 15.0]])

    def test_backward_routes_to_winner(self):
        x = np.array([[[[1.0, 4.0], [2.0, 3.0]]]])
        grad_x, _ = MaxPool2D(2).backward(x, np.array([[[[5.0]]]]))
        np.testing.assert_array_equal(grad_x, [[[[0.0, 5.0], [0.0, 0.0]]]])

    def test_tie_routes_to_first_in_scan_order(self):
        x = np.array([[[[2.0, 2.0], [2.0, 2.0]]]])
        grad_x, _ = MaxPool2D(2).backward(x, np.array([[[[1.0]]]]))
        np.testing.assert_array_equal(grad_x, [[[[1.0, 0.0], [0.0, 0.0]]]])

    @pytest.mark.parametrize("window,stride", [(2, 2), (3, 1), (2, 1)])
    def test_gradients(self, window, stride):
        rng = np.random.default_rng(4)
        # Distinct values avoid argmax ties, which are non-differentiable.
        x = rng.permutation(np.linspace(-1, 1, 2 * 36)).reshape(1, 2, 6, 6)
        check_layer_gradients(MaxPool2D(window, stride), x, rng)


class TestFlatten:
    def test_round_trip(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 3, 4, 5))
        layer = Flatten()
        y = layer.forward(x)
        assert y.shape == (2, 60)
        grad_x, _ = layer.backward(x, y)
        np.testing.assert_array_equal(grad_x, x)
