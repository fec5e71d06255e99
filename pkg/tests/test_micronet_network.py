"""Network forward/trace/predict and model-file round trips."""

import numpy as np
import pytest

from heatcluster.micronet import (
    CLASSIFICATION,
    REGRESSION,
    Conv2D,
    Dense,
    Flatten,
    MaxPool2D,
    ModelFormatError,
    Network,
    ReLU,
    build_classifier,
    forward,
    load,
    predict,
    save,
)


def tiny_dense_net(task=REGRESSION):
    layers = [Dense(2, 2, weight=np.eye(2), bias=np.zeros(2)), ReLU()]
    return Network(layers, task, (2,), ["a", "b"])


def make_conv_net(seed=0, n_classes=3):
    net = Network(
        [
            Conv2D(1, 4, 3),
            ReLU(),
            MaxPool2D(2),
            Flatten(),
            Dense(4 * 5 * 5, n_classes),
        ],
        CLASSIFICATION,
        (1, 12, 12),
        [str(i) for i in range(n_classes)],
    )
    net.init_params(np.random.default_rng(seed))
    return net


class TestForward:
    def test_identity_dense(self):
        out, trace = forward(tiny_dense_net(), np.array([3.0, 5.0]))
        np.testing.assert_array_equal(out, [3.0, 5.0])
        assert len(trace) == 2
        np.testing.assert_array_equal(trace.inputs[0], [3.0, 5.0])
        np.testing.assert_array_equal(trace.outputs[1], [3.0, 5.0])

    def test_relu_clamps(self):
        net = Network([Dense(2, 2, weight=np.eye(2)), ReLU()], REGRESSION, (2,), ["a", "b"])
        out, _ = forward(net, np.array([-1.0, 2.0]))
        np.testing.assert_array_equal(out, [0.0, 2.0])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="rejected input"):
            forward(tiny_dense_net(), np.zeros(3))

    def test_against_scalar_loop_reimplementation(self):
        """Three-layer net versus an independent straight-line recomputation."""
        rng = np.random.default_rng(0)
        w1 = rng.normal(size=(4, 3))
        b1 = rng.normal(size=4)
        w2 = rng.normal(size=(2, 4))
        b2 = rng.normal(size=2)
        net = Network(
            [Dense(3, 4, weight=w1, bias=b1), ReLU(), Dense(4, 2, weight=w2, bias=b2)],
            REGRESSION,
            (3,),
            ["u", "v"],
        )
        x = rng.normal(size=3)
        out, trace = forward(net, x)

        hidden = [0.0] * 4
        for i in range(4):
            acc = b1[i]
            for j in range(3):
                acc += w1[i, j] * x[j]
            hidden[i] = acc if acc > 0 else 0.0
        expected = [0.0, 0.0]
        for i in range(2):
            acc = b2[i]
            for j in range(4):
                acc += w2[i, j] * hidden[j]
            expected[i] = acc
        np.testing.assert_allclose(out, expected, rtol=1e-12)
        np.testing.assert_allclose(trace.outputs[1], hidden, rtol=1e-12)

    def test_forward_determinism(self):
        net = make_conv_net()
        img = np.random.default_rng(1).uniform(size=(1, 12, 12))
        out1, _ = forward(net, img)
        out2, _ = forward(net, img)
        assert np.array_equal(out1, out2)

    def test_trace_restarts_reproduce_downstream(self):
        net = make_conv_net()
        img = np.random.default_rng(2).uniform(size=(1, 12, 12))
        _, trace = forward(net, img)
        assert len(trace) == len(net.layers)
        for start in range(len(net.layers)):
            x = trace.inputs[start][None]
            for layer in net.layers[start:]:
                x = layer.forward(x)
            np.testing.assert_array_equal(x[0], trace.outputs[-1])


class TestPredict:
    def test_argmax(self):
        net = make_conv_net()
        img = np.random.default_rng(3).uniform(size=(1, 12, 12))
        out, _ = forward(net, img)
        assert predict(net, img) == int(np.argmax(out))

    def test_tie_breaks_low_index(self):
        net = Network(
            [Dense(1, 2, weight=np.array([[1.0], [1.0]]))], CLASSIFICATION, (1,), ["a", "b"]
        )
        assert predict(net, np.array([0.7])) == 0

    def test_regression_returns_vector(self):
        net = Network([Dense(2, 4)], REGRESSION, (2,), list("abcd"))
        out = predict(net, np.array([1.0, 2.0]))
        assert out.shape == (4,)


class TestNetworkValidation:
    def test_needs_parameterized_layer(self):
        with pytest.raises(ValueError, match="parameterized"):
            Network([ReLU()], REGRESSION, (2,), ["a", "b"])

    def test_shapes_must_compose(self):
        with pytest.raises(ValueError):
            Network([Dense(2, 3), Dense(4, 2)], REGRESSION, (2,), ["a", "b"])

    def test_final_width_matches_names(self):
        with pytest.raises(ValueError):
            Network([Dense(2, 3)], CLASSIFICATION, (2,), ["a", "b"])


class TestSerialization:
    def test_round_trip_identical_outputs(self, tmp_path):
        net = make_conv_net(seed=7)
        path = tmp_path / "model.net"
        save(net, path)
        other = load(path)
        img = np.random.default_rng(4).uniform(size=(1, 12, 12))
        out1, _ = forward(net, img)
        out2, _ = forward(other, img)
        assert np.array_equal(out1, out2)
        assert other.task == net.task
        assert other.output_names == net.output_names
        assert other.input_shape == net.input_shape
        for a, b in zip(net.layers, other.layers):
            assert a.kind == b.kind
            if hasattr(a, "weight"):
                assert np.array_equal(a.weight, b.weight)
                assert np.array_equal(a.bias, b.bias)

    def test_round_trip_bytes_stable(self, tmp_path):
        net = make_conv_net(seed=8)
        p1, p2 = tmp_path / "a.net", tmp_path / "b.net"
        save(net, p1)
        save(load(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file_is_parse_error(self, tmp_path):
        net = make_conv_net()
        path = tmp_path / "model.net"
        save(net, path)
        data = path.read_bytes()
        for cut in (4, 9, 20, len(data) // 2, len(data) - 3):
            clipped = tmp_path / f"cut{cut}.net"
            clipped.write_bytes(data[:cut])
            with pytest.raises(ModelFormatError, match="offset"):
                load(clipped)

    def test_wrong_magic_is_version_error(self, tmp_path):
        path = tmp_path / "bad.net"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(ModelFormatError, match="version"):
            load(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        net = make_conv_net()
        path = tmp_path / "model.net"
        save(net, path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(ModelFormatError, match="trailing"):
            load(path)


def test_default_classifier_shapes():
    net = build_classifier(8)
    assert net.interface_shapes[0] == (1, 32, 32)
    assert net.interface_shapes[-1] == (8,)
    # Second conv block produces 16 maps of 13x13 before pooling.
    assert net.interface_shapes[4] == (16, 13, 13)
    assert net.parameterized_interfaces() == [1, 4, 8, 10]
