"""ModelC / ModelM / ModelS constructors and the binary model file format.

All three models share one architecture::

    [conv 32@5x5, relu, pool] -> [conv 32@3x3, relu, pool]
    -> [conv 64@3x3, relu, pool] -> [conv 64@3x3, relu, pool]
    -> flatten -> dense(hidden) -> relu -> dense(num_classes)

and differ only in input size (256 for crack/mark, 500 for severity) and class
count.

Model file layout (all integers little-endian)::

    b"PCNN" | u32 version=1 | u8 task tag | u32 input_size | u32 num_classes
    | u32 layer count
    | per parameterized layer: u8 type tag | u32 dims... | f32 weights | f32 bias
"""
from __future__ import annotations

import io
import math
import os
import struct

import numpy as np

from .data import TASK_LABELS, check_task
from .exceptions import FormatError
from .nn import Conv2D, Dense, Flatten, MaxPool2D, Network, ReLU
from .tensor import DTYPE, make_rng

MODEL_NAMES = {"crack": "ModelC", "mark": "ModelM", "severity": "ModelS"}
DEFAULT_INPUT_SIZE = {"crack": 256, "mark": 256, "severity": 500}
HIDDEN_UNITS = 64

# (out_channels, kernel_size) per conv block
CONV_BLOCKS = ((32, 5), (32, 3), (64, 3), (64, 3))

MAGIC = b"PCNN"
VERSION = 1
TASK_TAGS = {"crack": 0, "mark": 1, "severity": 2}
CONV_TAG = 1
DENSE_TAG = 2


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def build_model(task: str, seed: int = 0, input_size: int | None = None,
                hidden_units: int = HIDDEN_UNITS) -> Network:
    """Build the task network with Glorot-uniform weights and zero biases.

    ``input_size`` defaults to the task's native resolution; smaller values
    give the same layer stack on downscaled inputs (used for quick synthetic
    runs).
    """
    check_task(task)
    size = DEFAULT_INPUT_SIZE[task] if input_size is None else int(input_size)
    num_classes = len(TASK_LABELS[task])
    rng = make_rng(seed)
    layers = []
    in_ch = 1
    for out_ch, k in CONV_BLOCKS:
        limit = glorot_limit(k * k * in_ch, out_ch)
        kernels = rng.uniform(-limit, limit, size=(out_ch, k, k, in_ch))
        layers += [Conv2D(kernels, np.zeros(out_ch)), ReLU(), MaxPool2D()]
        in_ch = out_ch
    layers.append(Flatten())
    probe = Network(layers, (size, size, 1))
    flat = probe.shape_trace()[-1][0]
    for fan_in, fan_out in ((flat, hidden_units), (hidden_units, num_classes)):
        limit = glorot_limit(fan_in, fan_out)
        layers.append(Dense(rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
        layers.append(ReLU())
    layers.pop()  # no activation after the class scores
    return Network(layers, (size, size, 1), task=task)


def count_parameters(net: Network) -> int:
    return sum(p.size for p in net.params())


def class_names(net: Network) -> tuple[str, ...]:
    if net.task is None:
        return tuple(str(i) for i in range(net.output_size))
    return TASK_LABELS[net.task]


# ---------------------------------------------------------------------------
# serialization

def model_to_bytes(net: Network) -> bytes:
    if net.task is None:
        raise ValueError("only task networks built by build_model can be saved")
    size = net.input_shape[0]
    parameterized = [layer for _, layer in net.parameterized()]
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IBIII", VERSION, TASK_TAGS[net.task], size,
                          len(TASK_LABELS[net.task]), len(parameterized)))
    for layer in parameterized:
        if isinstance(layer, Conv2D):
            weights = layer.kernels
            buf.write(struct.pack("<B4I", CONV_TAG, *weights.shape))
        elif isinstance(layer, Dense):
            weights = layer.weights
            buf.write(struct.pack("<B2I", DENSE_TAG, *weights.shape))
        else:
            raise ValueError(f"cannot serialize layer {layer!r}")
        buf.write(weights.astype("<f4").tobytes())
        buf.write(layer.bias.astype("<f4").tobytes())
    return buf.getvalue()


def save_model(net: Network, path: str | os.PathLike) -> None:
    data = model_to_bytes(net)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated model file (need {n} bytes at offset {self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape) -> np.ndarray:
        n = math.prod(shape)
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(DTYPE).reshape(shape)


def model_from_bytes(data: bytes) -> Network:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("bad magic; not a model file")
    version, tag, size, num_classes, n_layers = r.unpack("<IBIII")
    if version != VERSION:
        raise FormatError(f"unsupported model file version {version}")
    tags = {v: k for k, v in TASK_TAGS.items()}
    if tag not in tags:
        raise FormatError(f"unknown task tag {tag}")
    task = tags[tag]
    if num_classes != len(TASK_LABELS[task]):
        raise FormatError(f"task {task!r} has {len(TASK_LABELS[task])} classes, file declares {num_classes}")
    expected_layers = len(CONV_BLOCKS) + 2
    if n_layers != expected_layers:
        raise FormatError(f"expected {expected_layers} parameterized layers, file declares {n_layers}")

    layers = []
    in_ch = 1
    for out_ch, k in CONV_BLOCKS:
        (ltag,) = r.unpack("<B")
        if ltag != CONV_TAG:
            raise FormatError(f"expected conv layer tag, got {ltag}")
        dims = r.unpack("<4I")
        if dims != (out_ch, k, k, in_ch):
            raise FormatError(f"conv dims {dims} inconsistent with architecture {(out_ch, k, k, in_ch)}")
        layers += [Conv2D(r.floats(dims), r.floats((out_ch,))), ReLU(), MaxPool2D()]
        in_ch = out_ch
    layers.append(Flatten())
    try:
        flat = Network(layers, (size, size, 1)).shape_trace()[-1][0]
    except Exception as exc:
        raise FormatError(f"input size {size} is too small for the architecture: {exc}") from None

    (ltag,) = r.unpack("<B")
    hidden_dims = r.unpack("<2I")
    if ltag != DENSE_TAG or hidden_dims[0] != flat or hidden_dims[1] < 1:
        raise FormatError(f"hidden dense layer {hidden_dims} inconsistent with flatten length {flat}")
    layers += [Dense(r.floats(hidden_dims), r.floats((hidden_dims[1],))), ReLU()]
    (ltag,) = r.unpack("<B")
    out_dims = r.unpack("<2I")
    if ltag != DENSE_TAG or out_dims != (hidden_dims[1], num_classes):
        raise FormatError(f"output dense layer {out_dims} inconsistent with "
                          f"{(hidden_dims[1], num_classes)}")
    layers.append(Dense(r.floats(out_dims), r.floats((num_classes,))))
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after model data")
    return Network(layers, (size, size, 1), task=task)


def load_model(path: str | os.PathLike) -> Network:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def quantize(net: Network) -> Network:
    """Round every parameter to single precision, as a save/load cycle would."""
    return model_from_bytes(model_to_bytes(net))
