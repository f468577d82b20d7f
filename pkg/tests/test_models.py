import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pavecnn import models
from pavecnn.data import TASK_LABELS
from pavecnn.exceptions import FormatError, ShapeError
from pavecnn.nn import Conv2D, Dense, Flatten, MaxPool2D, Network, ReLU


def spatial_chain(size):
    """Hand-rolled shape arithmetic: valid k x k conv then floor-halving pool."""
    out = [size]
    for k in (5, 3, 3, 3):
        size = size - k + 1
        out.append(size)
        size //= 2
        out.append(size)
    return out


class TestArchitecture:
    def test_severity_chain(self):
        assert spatial_chain(500) == [500, 496, 248, 246, 123, 121, 60, 58, 29]
        net = models.build_model("severity")
        trace = net.shape_trace()
        convs = [trace[i][0] for i in range(0, 12, 3)]
        pools = [trace[i][0] for i in range(2, 12, 3)]
        assert convs == [496, 246, 121, 58] and pools == [248, 123, 60, 29]
        assert trace[12] == (29 * 29 * 64,) == (53824,)

    @pytest.mark.parametrize("task", ["crack", "mark"])
    def test_256_chain(self, task):
        assert spatial_chain(256) == [256, 252, 126, 124, 62, 60, 30, 28, 14]
        net = models.build_model(task)
        assert net.shape_trace()[12] == (12544,)
        assert net.output_size == len(TASK_LABELS[task])

    @pytest.mark.parametrize("task", sorted(TASK_LABELS))
    def test_layer_sequence(self, task):
        net = models.build_model(task, input_size=64)
        kinds = [type(l) for l in net.layers]
        assert kinds == [Conv2D, ReLU, MaxPool2D] * 4 + [Flatten, Dense, ReLU, Dense]
        convs = [l for l in net.layers if isinstance(l, Conv2D)]
        assert [(c.kernels.shape[0], c.kernels.shape[1], c.stride) for c in convs] == \
            [(32, 5, 1), (32, 3, 1), (64, 3, 1), (64, 3, 1)]
        pools = [l for l in net.layers if isinstance(l, MaxPool2D)]
        assert all((p.window, p.stride) == (2, 2) for p in pools)
        assert net.layers[-1].weights.shape[1] == len(TASK_LABELS[task])

    def test_parameter_counts(self):
        net = models.build_model("severity")
        sizes = [sum(p.size for p in layer.params().values()) for _, layer in net.parameterized()]
        expected = [5 * 5 * 1 * 32 + 32, 3 * 3 * 32 * 32 + 32, 3 * 3 * 32 * 64 + 64,
                    3 * 3 * 64 * 64 + 64, 53824 * 64 + 64, 64 * 3 + 3]
        assert sizes == expected
        assert sizes[0] == 832
        assert models.count_parameters(net) == sum(expected)

    def test_small_dense_count(self):
        net = Network([Dense(np.zeros((10, 3)), np.zeros(3))], (10,))
        assert models.count_parameters(net) == 33

    def test_initialization(self):
        net = models.build_model("crack", seed=3, input_size=64)
        conv1 = net.layers[0]
        limit = np.sqrt(6.0 / (25 + 32))
        assert np.all(np.abs(conv1.kernels) <= limit)
        assert np.abs(conv1.kernels).max() > 0.9 * limit
        for _, layer in net.parameterized():
            assert not np.any(layer.bias)

    def test_same_seed_same_weights(self):
        a = models.build_model("mark", seed=9, input_size=64)
        b = models.build_model("mark", seed=9, input_size=64)
        c = models.build_model("mark", seed=10, input_size=64)
        assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))
        assert not np.array_equal(a.params()[0], c.params()[0])

    def test_too_small_input(self):
        with pytest.raises(ShapeError):
            models.build_model("crack", input_size=40)

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            models.build_model("potholes")

    @pytest.mark.slow
    def test_full_size_forward(self):
        net = models.build_model("severity", seed=1)
        x = np.random.default_rng(0).uniform(size=(500, 500, 1))
        logits, _ = net.forward(x)
        assert logits.shape == (3,) and np.all(np.isfinite(logits))


class TestSerialization:
    @pytest.fixture
    def net(self):
        return models.build_model("severity", seed=5, input_size=64)

    def test_round_trip_bytes(self, net, tmp_path):
        path = tmp_path / "m.pcnn"
        models.save_model(net, path)
        again = models.load_model(path)
        models.save_model(again, tmp_path / "m2.pcnn")
        assert path.read_bytes() == (tmp_path / "m2.pcnn").read_bytes()
        assert again.task == "severity" and again.input_shape == (64, 64, 1)

    def test_logits_agree(self, net):
        x = np.random.default_rng(1).uniform(size=(3, 64, 64, 1))
        a = net.forward(x)[0]
        b = models.quantize(net).forward(x)[0]
        assert np.max(np.abs(a - b)) <= 1e-5

    def test_header_layout(self, net):
        blob = models.model_to_bytes(net)
        assert blob[:4] == b"PCNN"
        assert struct.unpack("<IBIII", blob[4:21]) == (1, 2, 64, 3, 6)
        assert struct.unpack("<B4I", blob[21:38]) == (1, 32, 5, 5, 1)
        n_floats = models.count_parameters(net)
        assert len(blob) == 21 + 4 * 17 + 2 * 9 + 4 * n_floats

    def test_bad_magic(self, net):
        blob = models.model_to_bytes(net)
        with pytest.raises(FormatError):
            models.model_from_bytes(b"XXXX" + blob[4:])

    @pytest.mark.parametrize("cut", [0, 3, 10, 21, 30, 500, -1])
    def test_truncated(self, net, cut):
        blob = models.model_to_bytes(net)
        with pytest.raises(FormatError):
            models.model_from_bytes(blob[:cut] if cut >= 0 else blob[:-1])

    def test_trailing_bytes(self, net):
        with pytest.raises(FormatError):
            models.model_from_bytes(models.model_to_bytes(net) + b"\0")

    def test_inconsistent_conv_dims(self, net):
        blob = bytearray(models.model_to_bytes(net))
        blob[22:26] = struct.pack("<I", 16)  # conv1 out channels
        with pytest.raises(FormatError):
            models.model_from_bytes(bytes(blob))

    def test_bad_version_and_tag(self, net):
        blob = bytearray(models.model_to_bytes(net))
        bad = bytes(blob[:4]) + struct.pack("<I", 2) + bytes(blob[8:])
        with pytest.raises(FormatError):
            models.model_from_bytes(bad)
        blob[8] = 7
        with pytest.raises(FormatError):
            models.model_from_bytes(bytes(blob))

    def test_untasked_network_rejected(self):
        with pytest.raises(ValueError):
            models.model_to_bytes(Network([Dense(np.zeros((2, 2)), np.zeros(2))], (2,)))

    @settings(max_examples=15, deadline=None)
    @given(task=st.sampled_from(sorted(TASK_LABELS)), seed=st.integers(0, 2**31 - 1),
           size=st.integers(48, 72))
    def test_round_trip_property(self, task, seed, size):
        net = models.build_model(task, seed=seed, input_size=size)
        blob = models.model_to_bytes(net)
        back = models.model_from_bytes(blob)
        assert models.model_to_bytes(back) == blob
        for a, b in zip(net.params(), back.params()):
            assert np.array_equal(a.astype(np.float32), b.astype(np.float32))
        assert models.class_names(back) == TASK_LABELS[task]
