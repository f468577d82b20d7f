import numpy as np
import pytest

from pavecnn.nn import Conv2D, Dense, Flatten, MaxPool2D, Network, ReLU


def naive_conv(x, kernels, bias, stride=1):
    """Direct nested-loop cross-correlation, [H, W, C_in] -> [H', W', C_out]."""
    h, w, cin = x.shape
    cout, kh, kw, _ = kernels.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    out = np.zeros((ho, wo, cout))
    for y in range(ho):
        for xx in range(wo):
            for o in range(cout):
                acc = bias[o]
                for i in range(kh):
                    for j in range(kw):
                        for c in range(cin):
                            acc += x[y * stride + i, xx * stride + j, c] * kernels[o, i, j, c]
                out[y, xx, o] = acc
    return out


def toy_network(seed=0, num_classes=3):
    """18x18x1 input, same layer types as the task models at tiny width."""
    rng = np.random.default_rng(seed)
    layers = [
        Conv2D(rng.normal(0, 0.5, (3, 3, 3, 1)), rng.normal(0, 0.1, 3)), ReLU(), MaxPool2D(),
        Conv2D(rng.normal(0, 0.3, (4, 3, 3, 3)), rng.normal(0, 0.1, 4)), ReLU(), MaxPool2D(),
        Flatten(),
        Dense(rng.normal(0, 0.3, (36, 5)), rng.normal(0, 0.1, 5)), ReLU(),
        Dense(rng.normal(0, 0.3, (5, num_classes)), rng.normal(0, 0.1, num_classes)),
    ]
    return Network(layers, (18, 18, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
