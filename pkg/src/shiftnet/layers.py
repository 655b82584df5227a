"""Forward and backward kernels for the non-shift layers.

Every function is pure numpy on (n, c, h, w) arrays. Backward functions take
the upstream gradient plus whatever the forward pass returned as its cache.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class Conv2dParams:
    """Geometry of a bias-free convolution with half-kernel zero padding."""

    in_channels: int
    out_channels: int
    kernel: int = 1
    stride: int = 1

    @property
    def padding(self) -> int:
        return self.kernel // 2

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        p, k, s = self.padding, self.kernel, self.stride
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


@dataclass(frozen=True)
class LinearParams:
    in_features: int
    out_features: int

    @property
    def weight_shape(self) -> tuple[int, int]:
        return (self.out_features, self.in_features)


@dataclass
class BatchNormParams:
    """Per-channel affine terms plus running statistics."""

    channels: int
    gamma: np.ndarray = None
    beta: np.ndarray = None
    running_mean: np.ndarray = None
    running_var: np.ndarray = None
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM
    dtype: type = field(default=np.float32, repr=False)

    def __post_init__(self):
        c = self.channels
        if self.gamma is None:
            self.gamma = np.ones(c, self.dtype)
        if self.beta is None:
            self.beta = np.zeros(c, self.dtype)
        if self.running_mean is None:
            self.running_mean = np.zeros(c, self.dtype)
        if self.running_var is None:
            self.running_var = np.ones(c, self.dtype)


def _check_channels(x: np.ndarray, c: int, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what}: expected (n, c, h, w) input, got shape {x.shape}")
    if x.shape[1] != c:
        raise ShapeError(f"{what}: expected {c} input channels, got {x.shape[1]}")


# -- convolution -------------------------------------------------------------

def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Rows are output pixels (n, y, x); columns are (c, ky, kx) taps."""
    n, c, _, _ = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return np.ascontiguousarray(cols), ho, wo


def conv2d(x: np.ndarray, weight: np.ndarray, stride: int = 1) -> np.ndarray:
    """Zero-padded ``same``-style convolution; ``weight`` is (out, in, k, k)."""
    o, c, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"only square kernels are supported, got {weight.shape}")
    _check_channels(x, c, "conv2d")
    cols, ho, wo = _im2col(x, k, stride, k // 2)
    out = cols @ weight.reshape(o, -1).T
    return out.reshape(x.shape[0], ho, wo, o).transpose(0, 3, 1, 2)


def conv2d_backward(dout, x, weight, stride=1):
    o, c, k, _ = weight.shape
    n, _, h, w = x.shape
    pad = k // 2
    cols, ho, wo = _im2col(x, k, stride, pad)
    d = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (d.T @ cols).reshape(weight.shape)
    dcols = (d @ weight.reshape(o, -1)).reshape(n, ho, wo, c, k, k)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                dcols[..., i, j].transpose(0, 3, 1, 2)
            )
    dx = dxp[:, :, pad:pad + h, pad:pad + w]
    return dx, dw


def pointwise_conv(x: np.ndarray, weight: np.ndarray, stride: int = 1) -> np.ndarray:
    """1x1 convolution lowered to a single matrix multiply over pixels."""
    o, c = weight.shape[:2]
    if weight.shape[2:] not in ((), (1, 1)):
        raise ShapeError(f"pointwise_conv needs a 1x1 kernel, got {weight.shape}")
    _check_channels(x, c, "pointwise_conv")
    xs = x[:, :, ::stride, ::stride]
    n, _, ho, wo = xs.shape
    rows = np.ascontiguousarray(xs.transpose(0, 2, 3, 1).reshape(-1, c))
    out = rows @ weight.reshape(o, c).T
    return out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)


def pointwise_conv_backward(dout, x, weight, stride=1):
    o, c = weight.shape[:2]
    xs = x[:, :, ::stride, ::stride]
    rows = xs.transpose(0, 2, 3, 1).reshape(-1, c)
    d = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (d.T @ rows).reshape(weight.shape)
    dxs = (d @ weight.reshape(o, c)).reshape(xs.shape[0], xs.shape[2], xs.shape[3], c)
    dx = np.zeros_like(x)
    dx[:, :, ::stride, ::stride] = dxs.transpose(0, 3, 1, 2)
    return dx, dw


# -- batch normalization ------------------------------------------------------

def batchnorm_train(x, gamma, beta, eps=BN_EPS):
    """Normalize with batch statistics over (n, h, w); returns (out, cache)."""
    _check_channels(x, gamma.shape[0], "batchnorm")
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma, mean.ravel(), var.ravel())


def batchnorm_eval(x, gamma, beta, running_mean, running_var, eps=BN_EPS):
    _check_channels(x, gamma.shape[0], "batchnorm")
    scale = gamma / np.sqrt(running_var + eps)
    shift = beta - running_mean * scale
    return x * scale[None, :, None, None] + shift[None, :, None, None]


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, _, _ = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=(0, 2, 3), keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
    )
    return dx, dgamma, dbeta


def update_running_stats(p: BatchNormParams, batch_mean, batch_var, count: int) -> None:
    # running variance tracks the unbiased estimate
    unbiased = batch_var * (count / (count - 1)) if count > 1 else batch_var
    m = p.momentum
    p.running_mean[...] = (1 - m) * p.running_mean + m * batch_mean
    p.running_var[...] = (1 - m) * p.running_var + m * unbiased


def batchnorm(x: np.ndarray, p: BatchNormParams, mode: str = "train") -> np.ndarray:
    if mode == "eval":
        return batchnorm_eval(x, p.gamma, p.beta, p.running_mean, p.running_var, p.eps)
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    out, cache = batchnorm_train(x, p.gamma, p.beta, p.eps)
    update_running_stats(p, cache[3], cache[4], x.shape[0] * x.shape[2] * x.shape[3])
    return out


# -- pooling ------------------------------------------------------------------

def maxpool_windows(x: np.ndarray, kernel: int = 3, stride: int = 2, pad: int = 1):
    """Pooling windows flattened to (n, c, ho, wo, kernel*kernel), -inf padded."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    return win.reshape(*win.shape[:4], kernel * kernel)


def maxpool(x: np.ndarray, kernel: int = 3, stride: int = 2, pad: int = 1):
    """Max pooling with -inf padding; returns (out, argmax-within-window)."""
    flat = maxpool_windows(x, kernel, stride, pad)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool_backward(dout, idx, x_shape, kernel=3, stride=2, pad=1):
    n, c, h, w = x_shape
    ho, wo = dout.shape[2:]
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dout.dtype)
    for t in range(kernel * kernel):
        i, j = divmod(t, kernel)
        dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.where(
            idx == t, dout, 0
        )
    return dxp[:, :, pad:pad + h, pad:pad + w]


def avgpool(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling with stride 2."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"2x2 average pooling needs even spatial dims, got {h}x{w}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avgpool_backward(dout: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) * dout.dtype.type(0.25)


def global_avgpool(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=(2, 3), keepdims=True)


def global_avgpool_backward(dout: np.ndarray, x_shape) -> np.ndarray:
    h, w = x_shape[2:]
    return np.broadcast_to(dout / (h * w), x_shape).copy()


# -- classifier head ----------------------------------------------------------

def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Fully connected layer on an (n, c, 1, 1) input; returns (n, out) logits."""
    if x.ndim != 4 or x.shape[2:] != (1, 1):
        raise ShapeError(f"linear expects 1x1 spatial input, got shape {x.shape}")
    _check_channels(x, weight.shape[1], "linear")
    return x.reshape(x.shape[0], -1) @ weight.T + bias


def linear_backward(dout, x, weight):
    flat = x.reshape(x.shape[0], -1)
    return (dout @ weight).reshape(x.shape), dout.T @ flat, dout.sum(axis=0)


def softmax_xent(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(logits) against integer labels."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"need {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    return float(loss), np.exp(logp)


def softmax_xent_backward(probs: np.ndarray, labels) -> np.ndarray:
    n = probs.shape[0]
    d = probs.copy()
    d[np.arange(n), labels] -= 1
    return d / n
