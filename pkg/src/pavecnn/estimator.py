"""scikit-learn compatible wrappers.

``ImagePreprocessor`` turns images (arrays, :class:`~pavecnn.data.Image`
objects or Netpbm paths) into normalized ``[N, S, S, 1]`` tensors, and
``PavementCNNClassifier`` trains one of the task networks with the
fit/predict/predict_proba/score interface, so the two compose in a
``sklearn.pipeline.Pipeline``.
"""
from __future__ import annotations

import os

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import data, models, train
from .exceptions import ShapeError


def _as_image(item) -> data.Image:
    if isinstance(item, data.Image):
        return item
    if isinstance(item, (str, os.PathLike)):
        return data.load_image(item)
    return data.Image(np.asarray(item))


class ImagePreprocessor(TransformerMixin, BaseEstimator):
    """Grayscale, bilinear resize to ``size`` x ``size`` and scale to [0, 1].

    Stateless; ``fit`` only records the output size.
    """

    def __init__(self, size: int = 256):
        self.size = size

    def fit(self, X, y=None):
        if int(self.size) < 1:
            raise ValueError(f"size must be >= 1, got {self.size}")
        self.n_features_in_ = int(self.size) ** 2
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        size = int(self.size)
        out = np.empty((len(X), size, size, 1))
        for i, item in enumerate(X):
            out[i] = data.normalize(data.preprocess(_as_image(item), size))
        return out


def check_images(X, input_size: int | None = None) -> np.ndarray:
    """Validate a stack of square single-channel images; returns ``[N, S, S, 1]`` float64."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=None)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4 or X.shape[3] != 1 or X.shape[1] != X.shape[2]:
        raise ShapeError(f"expected images shaped [N, S, S] or [N, S, S, 1], got {X.shape}")
    if input_size is not None and X.shape[1] != input_size:
        raise ShapeError(f"expected {input_size}x{input_size} images, got {X.shape[1]}x{X.shape[2]}")
    return data.normalize(X)


class PavementCNNClassifier(ClassifierMixin, BaseEstimator):
    """Four-conv-layer CNN classifier for one of the pavement tasks.

    Parameters
    ----------
    task : {"crack", "mark", "severity"}
        Selects the class set (and defaults for epochs and validation ratio).
    input_size : int, optional
        Side length of the network input.  Defaults to the side of the images
        passed to ``fit``.
    hidden_units : int
        Width of the first fully connected layer.
    learning_rate, batch_size, patience, early_stopping
        Plain minibatch SGD settings; see :class:`pavecnn.train.TrainConfig`.
    max_epochs, val_ratio : optional
        Default to the per-task protocol (30/20/30 epochs, 0.2/0.1/0.3 split).
    random_state : int
        Seeds weight initialization, the split and the per-epoch shuffles.

    Attributes
    ----------
    classes_ : ndarray
        Class labels in index order: task class names when ``fit`` saw string
        labels, otherwise ``0 .. C-1``.
    network_ : Network
    history_ : TrainHistory
    """

    def __init__(self, task: str = "crack", input_size: int | None = None, hidden_units: int = 64,
                 learning_rate: float = 0.01, batch_size: int = 64, max_epochs: int | None = None,
                 val_ratio: float | None = None, early_stopping: bool = True, patience: int = 5,
                 random_state: int = 0):
        self.task = task
        self.input_size = input_size
        self.hidden_units = hidden_units
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.val_ratio = val_ratio
        self.early_stopping = early_stopping
        self.patience = patience
        self.random_state = random_state

    def _encode(self, y) -> tuple[np.ndarray, np.ndarray]:
        names = data.TASK_LABELS[self.task]
        y = np.asarray(y)
        if y.dtype.kind in "USO":
            lookup = {n: i for i, n in enumerate(names)}
            unknown = sorted(set(y.tolist()) - set(lookup))
            if unknown:
                raise ValueError(f"labels {unknown} are not valid for task {self.task!r}")
            return np.array([lookup[v] for v in y.tolist()], dtype=np.int64), np.array(names)
        codes = y.astype(np.int64)
        if not np.array_equal(codes, y) or codes.min() < 0 or codes.max() >= len(names):
            raise ValueError(f"integer labels must lie in [0, {len(names)})")
        return codes, np.arange(len(names))

    def fit(self, X, y):
        data.check_task(self.task)
        X = check_images(X, self.input_size)
        codes, self.classes_ = self._encode(y)
        if len(codes) != len(X):
            raise ValueError(f"{len(X)} images but {len(codes)} labels")
        defaults = train.TASK_DEFAULTS[self.task]
        config = train.TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            max_epochs=self.max_epochs or defaults["max_epochs"],
            val_ratio=self.val_ratio or defaults["val_ratio"],
            seed=self.random_state,
            early_stopping=self.early_stopping,
            patience=self.patience,
        )
        tr, va = data.split_dataset(len(codes), config.val_ratio, config.seed)
        self.network_ = models.build_model(self.task, self.random_state, input_size=X.shape[1],
                                           hidden_units=self.hidden_units)
        self.history_ = train.fit(self.network_, (X[tr], codes[tr]), (X[va], codes[va]), config)
        self.n_features_in_ = X.shape[1] * X.shape[2]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        return train.predict_batch(self.network_, check_images(X, self.network_.input_shape[0]))

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]

    def save(self, path) -> None:
        check_is_fitted(self, "network_")
        models.save_model(self.network_, path)
