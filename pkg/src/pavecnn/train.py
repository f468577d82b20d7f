"""Minibatch SGD, validation-based early stopping, evaluation and prediction.

Inputs are ``[N, H, W, 1]`` arrays, either uint8 pixels (normalized per batch)
or floats already in [0, 1].  Within a batch, samples are processed in chunks of
``TrainConfig.chunk_size`` and gradients are summed in a fixed order, so a run
is bitwise reproducible for a given seed.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import normalize
from .exceptions import ShapeError
from .nn import Network, softmax, softmax_cross_entropy
from .tensor import make_rng

log = logging.getLogger(__name__)

HISTORY_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc"

# epoch budget and validation ratio of the original experiments, per task
TASK_DEFAULTS = {
    "crack": {"max_epochs": 30, "val_ratio": 0.2},
    "mark": {"max_epochs": 20, "val_ratio": 0.1},
    "severity": {"max_epochs": 30, "val_ratio": 0.3},
}


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.01
    max_epochs: int = 30
    val_ratio: float = 0.2
    seed: int = 0
    early_stopping: bool = True
    patience: int = 5
    chunk_size: int = 16

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0.0 < self.val_ratio < 1.0:
            raise ValueError("val_ratio must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float

    def csv_row(self) -> str:
        return (f"{self.epoch},{self.train_loss:.6f},{self.train_accuracy:.6f},"
                f"{self.val_loss:.6f},{self.val_accuracy:.6f}")


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def to_csv(self) -> str:
        return "\n".join([HISTORY_HEADER] + [r.csv_row() for r in self.records]) + "\n"

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


class ConfusionMatrix:
    """Counts indexed ``[true class, predicted class]``."""

    def __init__(self, counts):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ShapeError(f"confusion matrix must be square, got {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("confusion counts must be non-negative")
        self.counts = counts

    @classmethod
    def from_predictions(cls, y_true, y_pred, num_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def per_class_accuracy(self) -> np.ndarray:
        return np.diag(self.counts) / self.counts.sum(axis=1)

    def to_csv(self, class_names: Sequence[str] | None = None) -> str:
        n = self.counts.shape[0]
        names = list(class_names) if class_names is not None else [str(i) for i in range(n)]
        lines = ["true\\pred," + ",".join(names)]
        for name, row in zip(names, self.counts):
            lines.append(name + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"ConfusionMatrix({self.counts.tolist()})"


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    confusion: ConfusionMatrix

    def __iter__(self):
        return iter((self.loss, self.accuracy, self.confusion))


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], learning_rate: float):
    """In-place ``p -= lr * g`` for every parameter; returns ``params``."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"parameter {p.shape} and gradient {g.shape} differ")
    for p, g in zip(params, grads):
        p -= learning_rate * g
    return params


def batch_gradients(net: Network, X, y, indices, chunk_size: int = 16):
    """Mean-loss gradients over ``indices``.

    Returns ``(loss_sum, n_correct, grads)`` where ``grads`` is the gradient of
    the *mean* batch loss, summed chunk by chunk in index order.
    """
    indices = np.asarray(indices)
    n = len(indices)
    grads = [np.zeros_like(p) for p in net.params()]
    loss_sum = 0.0
    correct = 0
    for start in range(0, n, chunk_size):
        idx = indices[start:start + chunk_size]
        logits, caches = net.forward(normalize(X[idx]))
        losses, probs, g = softmax_cross_entropy(logits, y[idx])
        loss_sum += float(losses.sum())
        correct += int((probs.argmax(axis=1) == y[idx]).sum())
        _, chunk_grads = net.backward(caches, g / n)
        for acc, cg in zip(grads, chunk_grads):
            acc += cg
    return loss_sum, correct, grads


def train_epoch(net: Network, X, y, order, config: TrainConfig) -> tuple[float, float]:
    """One pass over ``order`` in batches; returns ``(mean loss, accuracy)``.

    Accuracy counts argmax predictions made during the pass, before each
    batch's update.
    """
    order = np.asarray(order)
    if len(order) == 0:
        raise ValueError("cannot train on an empty sample set")
    y = np.asarray(y)
    loss_sum = 0.0
    correct = 0
    for start in range(0, len(order), config.batch_size):
        batch = order[start:start + config.batch_size]
        l, c, grads = batch_gradients(net, X, y, batch, config.chunk_size)
        sgd_step(net.params(), grads, config.learning_rate)
        loss_sum += l
        correct += c
    return loss_sum / len(order), correct / len(order)


def evaluate(net: Network, X, y, chunk_size: int = 64) -> EvalResult:
    """Mean cross-entropy, accuracy and confusion matrix; never mutates ``net``."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty sample set")
    loss_sum = 0.0
    preds = np.empty(len(y), dtype=np.int64)
    for start in range(0, len(y), chunk_size):
        sl = slice(start, start + chunk_size)
        logits, _ = net.forward(normalize(X[sl]))
        losses, probs, _ = softmax_cross_entropy(logits, y[sl])
        loss_sum += float(losses.sum())
        preds[sl] = probs.argmax(axis=1)
    cm = ConfusionMatrix.from_predictions(y, preds, net.output_size)
    return EvalResult(loss_sum / len(y), cm.accuracy, cm)


def predict(net: Network, sample) -> tuple[int, np.ndarray]:
    """Class index (lowest index wins ties) and probability vector for one sample."""
    x = normalize(sample)
    if x.shape != net.input_shape:
        raise ShapeError(f"sample shape {x.shape} does not match network input {net.input_shape}")
    probs = softmax(net.forward(x)[0])
    return int(np.argmax(probs)), probs


def predict_batch(net: Network, X, chunk_size: int = 64) -> np.ndarray:
    """Probability rows for a stack of samples."""
    out = [softmax(net.forward(normalize(X[s:s + chunk_size]))[0])
           for s in range(0, len(X), chunk_size)]
    return np.concatenate(out, axis=0)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return make_rng([seed, epoch]).permutation(n)


def fit(net: Network, train_set, val_set, config: TrainConfig,
        validate: Callable[[Network], tuple[float, float]] | None = None,
        on_epoch_end: Callable[[EpochRecord, Network], None] | None = None) -> TrainHistory:
    """Train ``net`` in place and return the per-epoch history.

    ``train_set`` and ``val_set`` are ``(X, y)`` pairs.  ``validate`` replaces
    the default validation pass and must return ``(loss, accuracy)``.  With
    early stopping on, training halts once validation accuracy has failed to
    beat the best value for ``patience`` consecutive epochs, and the best
    epoch's weights are restored before returning.
    """
    X, y = train_set
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("cannot train on an empty sample set")
    if validate is None:
        Xv, yv = val_set

        def validate(model):
            res = evaluate(model, Xv, yv, config.chunk_size)
            return res.loss, res.accuracy

    history = TrainHistory()
    best_acc = -np.inf
    best_params = None
    wait = 0
    for epoch in range(1, config.max_epochs + 1):
        loss, acc = train_epoch(net, X, y, epoch_order(len(y), config.seed, epoch), config)
        val_loss, val_acc = validate(net)
        record = EpochRecord(epoch, loss, acc, float(val_loss), float(val_acc))
        history.records.append(record)
        log.info("epoch %d: loss %.4f acc %.4f val_loss %.4f val_acc %.4f",
                 epoch, loss, acc, val_loss, val_acc)
        if on_epoch_end is not None:
            on_epoch_end(record, net)
        if val_acc > best_acc:
            best_acc = val_acc
            best_params = [p.copy() for p in net.params()]
            history.best_epoch = epoch
            wait = 0
        else:
            wait += 1
        if config.early_stopping and wait >= config.patience:
            history.stopped_early = True
            log.info("early stopping after epoch %d (best epoch %d)", epoch, history.best_epoch)
            break
    if config.early_stopping and best_params is not None:
        net.set_params(best_params)
    return history
