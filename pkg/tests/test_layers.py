import math

import numpy as np
import pytest

from shiftnet import layers
from shiftnet.layers import BatchNormParams, Conv2dParams
from shiftnet.tensor import ShapeError
from oracles import conv2d_loops, max_rel_error, numeric_grad, softmax_xent_mp

rng = np.random.default_rng(0)


def test_identity_pointwise_conv():
    x = rng.standard_normal((2, 4, 3, 3))
    w = np.eye(4).reshape(4, 4, 1, 1)
    assert np.array_equal(layers.conv2d(x, w), x)
    assert np.array_equal(layers.pointwise_conv(x, w), x)


def test_stem_output_size():
    assert Conv2dParams(3, 64, 7, 2).output_size(224, 224) == (112, 112)
    x = np.zeros((1, 3, 224, 224), np.float32)
    w = np.zeros((4, 3, 7, 7), np.float32)
    assert layers.conv2d(x, w, 2).shape == (1, 4, 112, 112)


@pytest.mark.parametrize("k,stride", [(3, 1), (3, 2), (1, 2), (7, 2)])
def test_conv_matches_direct_loops(k, stride):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, k, k))
    np.testing.assert_allclose(layers.conv2d(x, w, stride), conv2d_loops(x, w, stride),
                               rtol=1e-12, atol=1e-12)


def test_pointwise_equals_conv_bit_for_bit():
    for trial in range(5):
        x = rng.standard_normal((2, 6, 7, 5))
        w = rng.standard_normal((4, 6, 1, 1))
        for s in (1, 2):
            assert np.array_equal(layers.pointwise_conv(x, w, s), layers.conv2d(x, w, s))


def test_strided_pointwise_samples_even_positions():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    out = layers.pointwise_conv(x, np.ones((1, 1, 1, 1)), 2)
    assert out[0, 0].tolist() == [[0, 2], [8, 10]]


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        layers.conv2d(np.zeros((1, 3, 4, 4)), np.zeros((2, 4, 3, 3)))
    with pytest.raises(ShapeError):
        layers.pointwise_conv(np.zeros((1, 3, 4, 4)), np.zeros((2, 3, 3, 3)))


def test_batchnorm_examples():
    x = rng.standard_normal((8, 3, 4, 4))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    p = BatchNormParams(3, dtype=np.float64)
    # eps keeps the output a hair under the input: x / sqrt(1 + eps)
    np.testing.assert_allclose(layers.batchnorm(x, p, "train"), x / np.sqrt(1 + 1e-5), atol=1e-6)

    const = np.full((4, 2, 3, 3), 7.0)
    p = BatchNormParams(2, beta=np.array([0.5, -1.0]), dtype=np.float64)
    out = layers.batchnorm(const, p, "train")
    assert np.allclose(out[:, 0], 0.5) and np.allclose(out[:, 1], -1.0)

    x = rng.standard_normal((6, 4, 5, 5)) * 3 + 2
    out = layers.batchnorm(x, BatchNormParams(4, dtype=np.float64), "train")
    assert np.all(np.abs(out.mean(axis=(0, 2, 3))) < 1e-6)
    var = out.var(axis=(0, 2, 3))
    assert np.all((var > 1 - 1e-4) & (var < 1 + 1e-4))


def test_batchnorm_running_stats_and_eval():
    p = BatchNormParams(2, dtype=np.float64)
    x = rng.standard_normal((4, 2, 3, 3)) + 5
    # eval before any statistics: mean 0 / var 1
    np.testing.assert_allclose(layers.batchnorm(x, p, "eval"), x / np.sqrt(1 + 1e-5))
    layers.batchnorm(x, p, "train")
    count = 4 * 9
    expected_mean = 0.1 * x.mean(axis=(0, 2, 3))
    expected_var = 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * count / (count - 1)
    np.testing.assert_allclose(p.running_mean, expected_mean)
    np.testing.assert_allclose(p.running_var, expected_var)
    assert np.all(p.running_var >= 0)
    with pytest.raises(ValueError):
        layers.batchnorm(x, p, "test")


def test_pool_examples():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    assert layers.avgpool(x).tolist() == [[[[2.5]]]]
    plane = np.full((1, 1, 7, 7), 3.25)
    assert layers.global_avgpool(plane).item() == 3.25
    out, _ = layers.maxpool(np.zeros((1, 1, 112, 112)))
    assert out.shape == (1, 1, 56, 56)
    with pytest.raises(ShapeError):
        layers.avgpool(np.zeros((1, 1, 5, 4)))


def test_pool_shapes_closed_form():
    for h in range(2, 65):
        for w in (2, 3, h):
            x = np.zeros((1, 1, h, w))
            out, _ = layers.maxpool(x)
            assert out.shape[2:] == ((h + 2 - 3) // 2 + 1, (w + 2 - 3) // 2 + 1)
            if h % 2 == 0 and w % 2 == 0:
                assert layers.avgpool(x).shape[2:] == (h // 2, w // 2)
            assert layers.global_avgpool(x).shape[2:] == (1, 1)


def test_maxpool_values():
    x = rng.standard_normal((1, 2, 6, 6))
    out, _ = layers.maxpool(x)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    for y in range(3):
        for xx in range(3):
            assert np.array_equal(out[0, :, y, xx],
                                  xp[0, :, 2 * y:2 * y + 3, 2 * xx:2 * xx + 3].max(axis=(1, 2)))


def test_softmax_xent_examples():
    loss, probs = layers.softmax_xent(np.zeros((3, 1000)), [0, 5, 999])
    assert loss == pytest.approx(math.log(1000), abs=1e-12)
    assert round(loss, 4) == 6.9078
    loss, _ = layers.softmax_xent(np.array([[1e4, 0.0, 0.0]]), [0])
    assert loss == 0.0
    logits = rng.standard_normal((5, 7)) * 4
    labels = rng.integers(0, 7, 5)
    assert layers.softmax_xent(logits, labels)[0] == pytest.approx(
        softmax_xent_mp(logits, labels), abs=1e-10)
    with pytest.raises(ValueError):
        layers.softmax_xent(logits, [0, 1, 2, 3, 7])


def test_linear_requires_pooled_input():
    w, b = np.ones((3, 4)), np.zeros(3)
    assert layers.linear(np.ones((2, 4, 1, 1)), w, b).tolist() == [[4, 4, 4]] * 2
    with pytest.raises(ShapeError):
        layers.linear(np.ones((2, 4, 2, 2)), w, b)


# -- layer-by-layer finite-difference checks (64-bit) ------------------------------

def _check(f_scalar, analytic, x, tol=1e-4):
    assert max_rel_error(analytic, numeric_grad(f_scalar, x)) < tol


@pytest.mark.parametrize("k,stride", [(1, 1), (1, 2), (3, 1), (3, 2), (7, 2)])
def test_conv_gradients(k, stride):
    x = rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((2, 3, k, k))
    up = rng.standard_normal(layers.conv2d(x, w, stride).shape)
    dx, dw = layers.conv2d_backward(up, x, w, stride)
    f = lambda: float((layers.conv2d(x, w, stride) * up).sum())
    _check(f, dx, x)
    _check(f, dw, w)
    if k == 1:
        pdx, pdw = layers.pointwise_conv_backward(up, x, w, stride)
        np.testing.assert_allclose(pdx, dx, atol=1e-12)
        np.testing.assert_allclose(pdw, dw, atol=1e-12)


def test_batchnorm_gradients():
    x = rng.standard_normal((3, 2, 4, 4))
    gamma, beta = rng.standard_normal(2), rng.standard_normal(2)
    up = rng.standard_normal(x.shape)
    _, cache = layers.batchnorm_train(x, gamma, beta)
    dx, dg, db = layers.batchnorm_backward(up, cache)
    f = lambda: float((layers.batchnorm_train(x, gamma, beta)[0] * up).sum())
    _check(f, dx, x)
    _check(f, dg, gamma)
    _check(f, db, beta)


def test_pool_and_head_gradients():
    x = rng.standard_normal((2, 2, 6, 6))
    out, idx = layers.maxpool(x)
    up = rng.standard_normal(out.shape)
    _check(lambda: float((layers.maxpool(x)[0] * up).sum()),
           layers.maxpool_backward(up, idx, x.shape), x)

    up = rng.standard_normal((2, 2, 3, 3))
    _check(lambda: float((layers.avgpool(x) * up).sum()), layers.avgpool_backward(up), x)

    up = rng.standard_normal((2, 2, 1, 1))
    _check(lambda: float((layers.global_avgpool(x) * up).sum()),
           layers.global_avgpool_backward(up, x.shape), x)

    feat = rng.standard_normal((4, 5, 1, 1))
    w, b = rng.standard_normal((3, 5)), rng.standard_normal(3)
    labels = np.array([0, 2, 1, 2])
    logits = layers.linear(feat, w, b)
    _, probs = layers.softmax_xent(logits, labels)
    dlogits = layers.softmax_xent_backward(probs, labels)
    dfeat, dw, db = layers.linear_backward(dlogits, feat, w)
    f = lambda: layers.softmax_xent(layers.linear(feat, w, b), labels)[0]
    _check(f, dfeat, feat)
    _check(f, dw, w)
    _check(f, db, b)
