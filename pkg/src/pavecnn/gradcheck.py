"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .nn import MaxPool2D, ReLU


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. ``x``, perturbed in place."""
    return numeric_gradient_with_kinks(f, x, h)[0]


def numeric_gradient_with_kinks(f: Callable[[], float], x: np.ndarray, h: float = 1e-5,
                                signature: Callable[[], np.ndarray] | None = None):
    """Like :func:`numeric_gradient`, also flagging components whose +h/-h
    evaluations land on different sides of a ReLU/max-pool kink.

    ``signature()`` returns the piecewise-linear state (ReLU masks, pooling
    argmaxes) for the current value of ``x``; a component is flagged when the
    state differs between ``x + h`` and ``x - h``.
    """
    grad = np.zeros_like(x)
    crossed = np.zeros(x.shape, dtype=bool)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    cross = crossed.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        sp = signature() if signature is not None else None
        flat[i] = orig - h
        fm = f()
        if signature is not None:
            cross[i] = not np.array_equal(sp, signature())
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return grad, crossed


def network_signature(net, x) -> np.ndarray:
    """Concatenated ReLU masks and pooling argmaxes of ``net`` at input ``x``."""
    _, caches = net.forward(x)
    parts = []
    for layer, cache in zip(net.layers, caches):
        if isinstance(layer, ReLU):
            parts.append((cache.data > 0).ravel().astype(np.int64))
        elif isinstance(layer, MaxPool2D):
            parts.append(cache.data[1].ravel().astype(np.int64))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """``|a - n| / max(|a|, |n|)``; pairs where both are below ``floor`` count as exact."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.abs(a), np.abs(n))
    err = np.abs(a - n) / np.where(denom < floor, 1.0, denom)
    return np.where(denom < floor, 0.0, err)


@dataclass
class GradCheckReport:
    name: str
    checked: int
    passed: int
    max_error: float

    @property
    def pass_fraction(self) -> float:
        return self.passed / self.checked if self.checked else 1.0

    def ok(self, min_fraction: float = 0.99) -> bool:
        return self.pass_fraction >= min_fraction


def compare(name: str, analytic: np.ndarray, numeric: np.ndarray, tol: float = 1e-4,
            exclude: np.ndarray | None = None) -> GradCheckReport:
    err = relative_error(analytic, numeric)
    keep = np.ones(err.shape, dtype=bool) if exclude is None else ~exclude
    err = err[keep]
    return GradCheckReport(name, int(err.size), int((err < tol).sum()),
                           float(err.max()) if err.size else 0.0)
