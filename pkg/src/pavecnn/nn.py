"""Layers with hand-written forward and backward passes.

Every layer works on a batch laid out as ``[N, H, W, C]`` (spatial layers) or
``[N, F]`` (dense layers).  ``forward`` returns ``(output, cache)`` and
``backward`` consumes that cache, so layers hold no per-call state and a single
network can serve concurrent readers.  The functional wrappers
(``conv_forward``, ``maxpool_forward`` ...) accept a single unbatched sample as
well; ``maxpool_forward`` keeps its argmax cache on the layer object for the
matching ``maxpool_backward`` call.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import NumericError, ShapeError, StateError
from .tensor import DTYPE


def conv_output_size(in_size: int, kernel_size: int, stride: int = 1) -> int:
    """Valid-padding output length: ``floor((in - k) / stride) + 1``."""
    if stride < 1 or kernel_size < 1:
        raise ShapeError(f"kernel size and stride must be >= 1 (k={kernel_size}, s={stride})")
    if in_size < kernel_size:
        raise ShapeError(f"input size {in_size} is smaller than kernel size {kernel_size}")
    return (in_size - kernel_size) // stride + 1


class Layer:
    """Base class.  Parameterless layers only override the three hooks below."""

    kind = "layer"

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, cache: Any, grad_out: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class Conv2D(Layer):
    """Valid-padding cross-correlation with per-channel bias.

    ``kernels`` has shape ``[C_out, kh, kw, C_in]``.  The forward pass gathers
    input patches into a matrix and multiplies once (im2col); backward scatters
    patch gradients back with one strided add per kernel offset.
    """

    kind = "conv"

    def __init__(self, kernels: np.ndarray, bias: np.ndarray, stride: int = 1):
        kernels = np.asarray(kernels, dtype=DTYPE)
        bias = np.asarray(bias, dtype=DTYPE)
        if kernels.ndim != 4:
            raise ShapeError(f"kernels must be [C_out, kh, kw, C_in], got {kernels.shape}")
        if bias.shape != (kernels.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} does not match {kernels.shape[0]} kernels")
        if stride < 1:
            raise ShapeError("stride must be >= 1")
        self.kernels = kernels
        self.bias = bias
        self.stride = int(stride)

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[3]

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.kernels.shape[1], self.kernels.shape[2]

    def params(self):
        return {"kernels": self.kernels, "bias": self.bias}

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if c != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} input channels, got {c}")
        kh, kw = self.kernel_size
        return (conv_output_size(h, kh, self.stride), conv_output_size(w, kw, self.stride),
                self.out_channels)

    def _patches(self, x):
        kh, kw = self.kernel_size
        s = self.stride
        # [N, H', W', C, kh, kw] -> [N, H', W', kh, kw, C] so rows match kernel layout
        win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::s, ::s]
        return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"conv input must be [N, H, W, C], got {x.shape}")
        ho, wo, co = self.output_shape(x.shape[1:])
        cols = self._patches(x).reshape(x.shape[0] * ho * wo, -1)
        out = cols @ self.kernels.reshape(co, -1).T
        out += self.bias
        return out.reshape(x.shape[0], ho, wo, co), (x.shape, cols)

    def backward(self, cache, grad_out):
        if cache is None:
            raise StateError("conv backward called without a forward cache")
        x_shape, cols = cache
        n, h, w, c = x_shape
        ho, wo, co = self.output_shape(x_shape[1:])
        if grad_out.shape != (n, ho, wo, co):
            raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward output "
                             f"{(n, ho, wo, co)}")
        g2 = grad_out.reshape(-1, co)
        grad_k = (g2.T @ cols).reshape(self.kernels.shape)
        grad_b = g2.sum(axis=0)
        kh, kw = self.kernel_size
        s = self.stride
        gcols = (g2 @ self.kernels.reshape(co, -1)).reshape(n, ho, wo, kh, kw, c)
        grad_x = np.zeros(x_shape, dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                grad_x[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += gcols[:, :, :, i, j, :]
        return grad_x, {"kernels": grad_k, "bias": grad_b}

    def __repr__(self):
        co, kh, kw, ci = self.kernels.shape
        return f"Conv2D({co}@{kh}x{kw}, in={ci}, stride={self.stride})"


class ReLU(Layer):
    kind = "relu"

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        return np.maximum(x, 0.0), x

    def backward(self, cache, grad_out):
        if cache is None:
            raise StateError("relu backward called without a forward cache")
        if cache.shape != grad_out.shape:
            raise ShapeError(f"grad_out shape {grad_out.shape} != cached input {cache.shape}")
        # derivative at exactly 0 is taken as 0
        return np.where(cache > 0, grad_out, 0.0), {}


class MaxPool2D(Layer):
    """2x2 max pooling with stride 2.

    Odd trailing rows/columns are dropped.  Ties go to the first maximum in
    row-major window order, and backward routes each gradient entry to exactly
    that position.
    """

    kind = "pool"
    window = 2
    stride = 2

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if h < 2 or w < 2:
            raise ShapeError(f"maxpool needs H, W >= 2, got {h}x{w}")
        return h // 2, w // 2, c

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"maxpool input must be [N, H, W, C], got {x.shape}")
        n, h, w, c = x.shape
        ho, wo, _ = self.output_shape(x.shape[1:])
        win = (x[:, :2 * ho, :2 * wo, :]
               .reshape(n, ho, 2, wo, 2, c)
               .transpose(0, 1, 3, 5, 2, 4)
               .reshape(n, ho, wo, c, 4))
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        return out, (x.shape, arg)

    def backward(self, cache, grad_out):
        if cache is None:
            raise StateError("maxpool backward called before forward")
        x_shape, arg = cache
        if grad_out.shape != arg.shape:
            raise ShapeError(f"grad_out shape {grad_out.shape} != pooled shape {arg.shape}")
        n, h, w, c = x_shape
        ho, wo = arg.shape[1:3]
        routed = np.zeros(arg.shape + (4,), dtype=DTYPE)
        np.put_along_axis(routed, arg[..., None], grad_out[..., None], axis=-1)
        grad_x = np.zeros(x_shape, dtype=DTYPE)
        grad_x[:, :2 * ho, :2 * wo, :] = (routed.reshape(n, ho, wo, c, 2, 2)
                                          .transpose(0, 1, 4, 2, 5, 3)
                                          .reshape(n, 2 * ho, 2 * wo, c))
        return grad_x, {}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad_out):
        if cache is None:
            raise StateError("flatten backward called without a forward cache")
        return grad_out.reshape(cache), {}


class Dense(Layer):
    """Affine map ``x @ W + b`` with ``W`` of shape ``[in_features, out_features]``."""

    kind = "dense"

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        weights = np.asarray(weights, dtype=DTYPE)
        bias = np.asarray(bias, dtype=DTYPE)
        if weights.ndim != 2 or bias.shape != (weights.shape[1],):
            raise ShapeError(f"dense weights {weights.shape} / bias {bias.shape} are inconsistent")
        self.weights = weights
        self.bias = bias

    @property
    def in_features(self) -> int:
        return self.weights.shape[0]

    @property
    def out_features(self) -> int:
        return self.weights.shape[1]

    def params(self):
        return {"weights": self.weights, "bias": self.bias}

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ShapeError(f"dense expects {self.in_features} features, got {in_shape}")
        return (self.out_features,)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense expects [N, {self.in_features}], got {x.shape}")
        return x @ self.weights + self.bias, x

    def backward(self, cache, grad_out):
        if cache is None:
            raise StateError("dense backward called without a forward cache")
        x = cache
        return (grad_out @ self.weights.T,
                {"weights": x.T @ grad_out, "bias": grad_out.sum(axis=0)})

    def __repr__(self):
        return f"Dense({self.in_features}->{self.out_features})"


# ---------------------------------------------------------------------------
# single-sample functional API

def _batched(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == ndim - 1:
        return x[None], True
    return x, False


def conv_forward(x: np.ndarray, layer: Conv2D) -> np.ndarray:
    xb, single = _batched(x, 4)
    out, _ = layer.forward(xb)
    return out[0] if single else out


def conv_backward(layer: Conv2D, cached_input: np.ndarray, grad_out: np.ndarray):
    """Return ``(grad_input, grad_kernels, grad_bias)`` for one forward call."""
    xb, single = _batched(cached_input, 4)
    gb, _ = _batched(grad_out, 4)
    _, cache = layer.forward(xb)
    gx, grads = layer.backward(cache, gb)
    return (gx[0] if single else gx), grads["kernels"], grads["bias"]


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def relu_backward(cached_x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return ReLU().backward(np.asarray(cached_x, dtype=DTYPE), np.asarray(grad_out, dtype=DTYPE))[0]


def maxpool_forward(x: np.ndarray, layer: MaxPool2D) -> np.ndarray:
    """Pool one ``[H, W, C]`` sample (or a batch), keeping argmax positions on ``layer``."""
    xb, single = _batched(x, 4)
    out, cache = layer.forward(xb)
    layer.last_cache = (cache, single)
    return out[0] if single else out


def maxpool_backward(layer: MaxPool2D, grad_out: np.ndarray) -> np.ndarray:
    """Route ``grad_out`` through the argmax positions of the last :func:`maxpool_forward`."""
    last = getattr(layer, "last_cache", None)
    if last is None:
        raise StateError("maxpool backward called before forward")
    cache, single = last
    g = np.asarray(grad_out, dtype=DTYPE)
    gx, _ = layer.backward(cache, g[None] if single else g)
    return gx[0] if single else gx


def dense_forward(x: np.ndarray, layer: Dense) -> np.ndarray:
    xb, single = _batched(x, 2)
    out, _ = layer.forward(xb)
    return out[0] if single else out


def dense_backward(layer: Dense, cached_x: np.ndarray, grad_out: np.ndarray):
    """Return ``(grad_x, grad_weights, grad_bias)``."""
    xb, single = _batched(cached_x, 2)
    gb, _ = _batched(grad_out, 2)
    gx, grads = layer.backward(xb, gb)
    return (gx[0] if single else gx), grads["weights"], grads["bias"]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=DTYPE)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels):
    """Softmax plus negative log-likelihood, computed with max subtraction.

    ``logits`` is ``[C]`` with an int label, or ``[N, C]`` with ``N`` labels.
    Returns ``(loss, probs, grad_logits)``; in the batched case ``loss`` is the
    per-sample vector and ``grad_logits`` is the per-sample gradient (not
    averaged).
    """
    z = np.asarray(logits, dtype=DTYPE)
    single = z.ndim == 1
    if single:
        z = z[None]
    y = np.atleast_1d(np.asarray(labels))
    if y.shape != (z.shape[0],):
        raise ShapeError(f"{y.shape[0]} labels for {z.shape[0]} logit rows")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError(f"labels must be integer class indices, got dtype {y.dtype}")
    n_classes = z.shape[1]
    if np.any((y < 0) | (y >= n_classes)):
        raise ValueError(f"label outside [0, {n_classes})")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logit")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(z.shape[0])
    loss = -log_probs[rows, y]
    probs = np.exp(log_probs)
    grad = probs.copy()
    grad[rows, y] -= 1.0
    if single:
        return float(loss[0]), probs[0], grad[0]
    return loss, probs, grad


# ---------------------------------------------------------------------------

@dataclass
class LayerActivationCache:
    layer_index: int
    input_shape: tuple[int, ...]
    data: Any


class Network:
    """An ordered stack of layers with a declared per-sample input shape."""

    def __init__(self, layers: Sequence[Layer], input_shape: Sequence[int], task: str | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.task = task
        self.shape_trace()  # fail fast on an inconsistent stack

    def shape_trace(self) -> list[tuple[int, ...]]:
        """Per-sample output shape of every layer, computed without running it."""
        shapes = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer!r}): {exc}") from None
            shapes.append(shape)
        return shapes

    @property
    def output_size(self) -> int:
        return self.shape_trace()[-1][0]

    def parameterized(self) -> list[tuple[int, Layer]]:
        return [(i, l) for i, l in enumerate(self.layers) if l.params()]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (layer order, weights before bias)."""
        return [p for _, layer in self.parameterized() for p in layer.params().values()]

    def set_params(self, values: Sequence[np.ndarray]) -> None:
        values = list(values)
        current = self.params()
        if len(values) != len(current):
            raise ShapeError(f"expected {len(current)} parameter arrays, got {len(values)}")
        for dst, src in zip(current, values):
            if dst.shape != np.shape(src):
                raise ShapeError(f"parameter shape {np.shape(src)} != {dst.shape}")
            dst[...] = src

    def forward(self, x: np.ndarray):
        """Run all layers.  Accepts ``input_shape`` or ``[N, *input_shape]``.

        Returns ``(logits, caches)``; caches feed :meth:`backward`.
        """
        x = np.asarray(x, dtype=DTYPE)
        single = x.shape == self.input_shape
        if single:
            x = x[None]
        elif x.shape[1:] != self.input_shape:
            raise ShapeError(f"layer 0 ({self.layers[0]!r}): input shape {x.shape} does not match "
                             f"network input {self.input_shape}")
        caches = []
        for i, layer in enumerate(self.layers):
            in_shape = x.shape
            try:
                x, data = layer.forward(x)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer!r}): {exc}") from None
            caches.append(LayerActivationCache(i, in_shape, data))
        return (x[0] if single else x), caches

    def backward(self, caches: Sequence[LayerActivationCache], grad_logits: np.ndarray):
        """Backpropagate; returns ``(grad_input, grads)`` with ``grads`` aligned to :meth:`params`."""
        if len(caches) != len(self.layers):
            raise StateError("caches do not come from a forward pass of this network")
        g = np.asarray(grad_logits, dtype=DTYPE)
        single = g.ndim == 1
        if single:
            g = g[None]
        per_layer: list[dict[str, np.ndarray]] = [{} for _ in self.layers]
        for i in range(len(self.layers) - 1, -1, -1):
            cache = caches[i]
            if cache.layer_index != i:
                raise StateError(f"cache {i} belongs to layer {cache.layer_index}")
            try:
                g, per_layer[i] = self.layers[i].backward(cache.data, g)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({self.layers[i]!r}): {exc}") from None
        grads = [per_layer[i][k] for i, layer in self.parameterized() for k in layer.params()]
        return (g[0] if single else g), grads

    def predict_logits(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def __repr__(self):
        body = ", ".join(repr(l) for l in self.layers)
        return f"Network(input={self.input_shape}, [{body}])"


def network_forward(net: Network, x: np.ndarray):
    return net.forward(x)


def network_backward(net: Network, caches, grad_logits):
    return net.backward(caches, grad_logits)[1]
