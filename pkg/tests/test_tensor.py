import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from shiftnet.tensor import (ShapeError, dumps_tensor, elementwise, loads_tensor,
                             matmul, read_tensor, write_tensor, zeros)
from oracles import matmul_loops


def test_zeros_shapes():
    assert zeros((1, 1, 2, 2)).tolist() == [[[[0, 0], [0, 0]]]]
    z = zeros((2, 3, 4, 4))
    assert z.size == 96 and not z.any()
    assert z.dtype == np.float32


@pytest.mark.parametrize("shape", [(1, 0, 2, 2), (0, 1, 1, 1), (1, 1, 2)])
def test_zeros_rejects_bad_shape(shape):
    with pytest.raises(ShapeError):
        zeros(shape)


def test_index_layout_is_row_major_nchw():
    n, c, h, w = 2, 3, 4, 5
    x = np.arange(n * c * h * w, dtype=np.float64).reshape(n, c, h, w)
    flat = x.ravel()
    for idx in [(0, 0, 0, 0), (1, 2, 3, 4), (1, 0, 2, 1)]:
        b, ch, y, xx = idx
        assert x[idx] == flat[((b * c + ch) * h + y) * w + xx]


def test_matmul_examples():
    x = np.random.default_rng(0).standard_normal((4, 3))
    assert np.array_equal(matmul(np.eye(4), x), x)
    assert matmul(np.array([[1, 2], [3, 4]]), np.array([[1], [1]])).tolist() == [[3], [7]]
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_matches_loops():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    np.testing.assert_allclose(matmul(a, b), matmul_loops(a, b), rtol=1e-12, atol=1e-12)


def test_matmul_exact_on_integers():
    rng = np.random.default_rng(2)
    a = rng.integers(-9, 10, (6, 8)).astype(np.float64)
    b = rng.integers(-9, 10, (8, 5)).astype(np.float64)
    assert np.array_equal(matmul(a, b), matmul_loops(a, b))


def test_matmul_associativity():
    rng = np.random.default_rng(3)
    a, b, c = (rng.standard_normal((8, 8)) for _ in range(3))
    left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
    assert np.max(np.abs(left - right)) / np.max(np.abs(left)) < 1e-6


def test_elementwise():
    assert elementwise("relu", np.array([-1.0, 0.0, 2.0])).tolist() == [0, 0, 2]
    x = np.random.default_rng(4).standard_normal((1, 2, 3, 3))
    assert np.array_equal(elementwise("add", x, np.zeros_like(x)), x)
    assert np.array_equal(elementwise("scale", elementwise("scale", x, 2), 0.5), x)
    assert np.array_equal(elementwise("mul", x, np.ones_like(x)), x)
    with pytest.raises(ShapeError):
        elementwise("add", x, np.zeros((1, 2, 3, 4)))
    with pytest.raises(ValueError):
        elementwise("tanh", x)


def test_flatten_reshape_round_trip():
    x = np.random.default_rng(5).standard_normal((2, 3, 4, 5))
    assert np.array_equal(x.ravel().reshape(x.shape), x)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float32, st.tuples(*[st.integers(1, 3)] * 4),
                  elements=st.floats(width=32, allow_nan=False, allow_infinity=False)))
def test_text_format_round_trips_float32_exactly(x):
    y = loads_tensor(dumps_tensor(x))
    assert y.dtype == np.float32
    assert np.array_equal(x.view(np.uint32), y.view(np.uint32))


def test_text_format_header_and_files(tmp_path):
    x = np.arange(6, dtype=np.float32).reshape(1, 1, 2, 3) / 4
    text = dumps_tensor(x)
    assert text.splitlines()[0] == "1 1 2 3"
    assert text.splitlines()[1] == "0 0.25 0.5"
    write_tensor(tmp_path / "t.txt", x)
    assert np.array_equal(read_tensor(tmp_path / "t.txt"), x)
    with pytest.raises(ShapeError):
        loads_tensor("1 1 2 2\n1 2 3")
