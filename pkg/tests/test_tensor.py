import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pavecnn.exceptions import ShapeError
from pavecnn.tensor import (add, elementwise, flat_index, matmul, reshape, scale, sub,
                            tensor_filled, tensor_random_uniform, unravel)


class TestFilled:
    def test_zero_fill(self):
        t = tensor_filled([2, 2], 0.0)
        assert t.shape == (2, 2) and t.dtype == np.float64
        assert np.all(t == 0.0)

    def test_singleton(self):
        assert tensor_filled([1], 7.5).tolist() == [7.5]

    def test_ones_shape_preserved(self):
        t = tensor_filled([3, 3, 2], 1.0)
        assert t.shape == (3, 3, 2) and t.size == 18 and np.all(t == 1.0)

    @pytest.mark.parametrize("shape", [[0], [2, 0], [], [3, -1]])
    def test_bad_shape(self, shape):
        with pytest.raises(ShapeError):
            tensor_filled(shape, 1.0)

    def test_overflowing_shape(self):
        with pytest.raises(ShapeError):
            tensor_filled([2 ** 40, 2 ** 40], 0.0)


class TestRandomUniform:
    def test_determinism(self):
        a = tensor_random_uniform([4], -1, 1, 42)
        b = tensor_random_uniform([4], -1, 1, 42)
        assert a.tobytes() == b.tobytes()

    @pytest.mark.parametrize("seed", [0, 1, 123])
    def test_mean(self, seed):
        t = tensor_random_uniform([1000], 0, 1, seed)
        assert 0.45 <= t.mean() <= 0.55

    def test_range(self):
        t = tensor_random_uniform([2, 2], 0, 0.1, 7)
        assert np.all(t >= 0) and np.all(t < 0.1)

    def test_lo_ge_hi(self):
        with pytest.raises(ValueError):
            tensor_random_uniform([2], 1.0, 1.0, 0)


class TestReshape:
    def test_flatten_order(self):
        t = np.arange(6.0).reshape(2, 3)
        r = reshape(t, [6])
        assert r.tolist() == [0, 1, 2, 3, 4, 5]

    def test_modelS_flatten(self):
        t = tensor_filled([29, 29, 64], 1.0)
        assert reshape(t, [53824]).shape == (53824,)

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            reshape(tensor_filled([6], 0.0), [4])

    def test_original_unchanged(self):
        t = np.arange(6.0)
        r = reshape(t, [2, 3])
        r[0, 0] = 99
        assert t[0] == 0

    def test_round_trip_bitwise(self):
        t = np.random.default_rng(0).normal(size=(3, 4, 5))
        assert reshape(reshape(t, [60]), [3, 4, 5]).tobytes() == t.tobytes()


class TestMatmul:
    def test_identity(self):
        x = np.random.default_rng(1).normal(size=(3, 4))
        assert np.array_equal(matmul(np.eye(3), x), x)

    def test_hand_example(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        assert matmul(a, b).tolist() == [[19, 22], [43, 50]]

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_associative_on_small_integers(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (rng.integers(-5, 6, size=s).astype(float) for s in [(3, 4), (4, 2), (2, 5)])
        assert np.array_equal(matmul(matmul(a, b), c), matmul(a, matmul(b, c)))


class TestElementwise:
    def test_scale(self):
        assert scale(np.array([1.0, 2.0, 3.0]), 2).tolist() == [2, 4, 6]

    def test_add_identity(self):
        x = np.random.default_rng(2).normal(size=(2, 3))
        assert np.array_equal(add(x, np.zeros_like(x)), x)

    def test_sub_self(self):
        x = np.random.default_rng(3).normal(size=5)
        assert np.all(sub(x, x) == 0)

    def test_binary_mismatch(self):
        with pytest.raises(ShapeError):
            add(np.ones(3), np.ones((3, 1)))

    def test_python_callable(self):
        out = elementwise(np.array([[1.0, -2.0]]), abs)
        assert out.shape == (1, 2) and out.tolist() == [[1, 2]]

    def test_ufunc(self):
        assert elementwise(np.array([4.0, 9.0]), np.sqrt).tolist() == [2, 3]


def test_row_major_addressing_round_trip():
    shape = (3, 4, 5)
    a = np.arange(60).reshape(shape)
    for coords in itertools.product(*(range(d) for d in shape)):
        i, j, k = coords
        idx = flat_index(shape, coords)
        assert idx == (i * 4 + j) * 5 + k
        assert a.ravel()[idx] == a[coords]
        assert unravel(shape, idx) == coords
