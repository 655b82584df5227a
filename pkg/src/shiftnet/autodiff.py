"""Tape-based reverse-mode differentiation over the layer kernels.

A :class:`Graph` records every op executed through it, in order. Calling
:meth:`Graph.backward` walks that tape in reverse, so nodes are always
visited in exact reverse topological order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import layers
from .shift import ShiftPlan, shift_adjoint, shift_forward


@dataclass(eq=False)
class Parameter:
    """A trainable buffer with its gradient.

    ``decay`` marks whether weight decay applies (conv/fc weights only).
    """

    name: str
    data: np.ndarray
    decay: bool = True
    grad: np.ndarray = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0


class Var:
    __slots__ = ("data", "grad", "requires_grad", "param")

    def __init__(self, data, requires_grad=True, param=None):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.param = param

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Var(shape={self.data.shape}, dtype={self.data.dtype})"


@dataclass
class Node:
    op: str
    inputs: tuple[Var, ...]
    out: Var
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    macs: int = 0
    pattern: np.ndarray | None = None  # relu mask / maxpool argmax
    meta: tuple = ()


@dataclass
class Graph:
    """Recording context for one forward pass.

    ``train`` selects batch statistics (and running-stat updates) in batch
    normalization. ``macs`` accumulates the multiply-accumulates actually
    executed by convolutions and fully connected layers.
    """

    train: bool = True
    nodes: list[Node] = field(default_factory=list)
    macs: int = 0
    _leaves: dict[int, Var] = field(default_factory=dict, repr=False)

    # -- leaves ---------------------------------------------------------------
    def input(self, data: np.ndarray, requires_grad: bool = False) -> Var:
        return Var(np.asarray(data), requires_grad=requires_grad)

    def param(self, p: Parameter) -> Var:
        v = self._leaves.get(id(p))
        if v is None:
            v = self._leaves[id(p)] = Var(p.data, param=p)
        return v

    def _record(self, op, inputs, out, backward, macs=0, pattern=None) -> Var:
        v = Var(out, requires_grad=any(i.requires_grad for i in inputs))
        self.nodes.append(Node(op, tuple(inputs), v, backward, macs, pattern))
        self.macs += macs
        return v

    # -- ops ------------------------------------------------------------------
    def conv2d(self, x: Var, w: Parameter, stride: int = 1) -> Var:
        wv = self.param(w)
        k = w.data.shape[2]
        if k == 1:
            out = layers.pointwise_conv(x.data, w.data, stride)
            back = layers.pointwise_conv_backward
        else:
            out = layers.conv2d(x.data, w.data, stride)
            back = layers.conv2d_backward
        xd, wd = x.data, w.data
        macs = int(np.prod(out.shape)) * int(np.prod(w.data.shape[1:]))
        return self._record(
            "conv2d", (x, wv), out, lambda g: back(g, xd, wd, stride), macs
        )

    def batchnorm(self, x: Var, bn: layers.BatchNormParams,
                  gamma: Parameter, beta: Parameter) -> Var:
        gv, bv = self.param(gamma), self.param(beta)
        if not self.train:
            out = layers.batchnorm_eval(
                x.data, gamma.data, beta.data, bn.running_mean, bn.running_var, bn.eps
            )
            inv_std = 1.0 / np.sqrt(bn.running_var + bn.eps)
            scale = gamma.data * inv_std
            xhat = (x.data - bn.running_mean[None, :, None, None]) * inv_std[None, :, None, None]

            def back(g):
                return (g * scale[None, :, None, None],
                        (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3)))
            return self._record("batchnorm", (x, gv, bv), out, back)
        out, cache = layers.batchnorm_train(x.data, gamma.data, beta.data, bn.eps)
        n, _, h, w = x.data.shape
        layers.update_running_stats(bn, cache[3], cache[4], n * h * w)
        return self._record(
            "batchnorm", (x, gv, bv), out, lambda g: layers.batchnorm_backward(g, cache)
        )

    def relu(self, x: Var) -> Var:
        mask = x.data > 0
        out = np.where(mask, x.data, 0).astype(x.data.dtype, copy=False)
        return self._record("relu", (x,), out, lambda g: (g * mask,), pattern=mask)

    def add(self, a: Var, b: Var) -> Var:
        if a.shape != b.shape:
            raise ValueError(f"add: shapes differ {a.shape} vs {b.shape}")
        return self._record("add", (a, b), a.data + b.data, lambda g: (g, g))

    def shift(self, x: Var, plan: ShiftPlan) -> Var:
        out = shift_forward(x.data, plan)
        return self._record("shift", (x,), out, lambda g: (shift_adjoint(g, plan),))

    def avgpool(self, x: Var) -> Var:
        return self._record(
            "avgpool", (x,), layers.avgpool(x.data), lambda g: (layers.avgpool_backward(g),)
        )

    def maxpool(self, x: Var, kernel: int = 3, stride: int = 2, pad: int = 1) -> Var:
        out, idx = layers.maxpool(x.data, kernel, stride, pad)
        shape = x.shape
        v = self._record(
            "maxpool", (x,), out,
            lambda g: (layers.maxpool_backward(g, idx, shape, kernel, stride, pad),),
            pattern=idx,
        )
        self.nodes[-1].meta = (kernel, stride, pad)
        return v

    def global_avgpool(self, x: Var) -> Var:
        shape = x.shape
        return self._record(
            "global_avgpool", (x,), layers.global_avgpool(x.data),
            lambda g: (layers.global_avgpool_backward(g, shape),),
        )

    def linear(self, x: Var, w: Parameter, b: Parameter) -> Var:
        wv, bv = self.param(w), self.param(b)
        xd, wd = x.data, w.data
        out = layers.linear(xd, wd, b.data)
        return self._record(
            "linear", (x, wv, bv), out, lambda g: layers.linear_backward(g, xd, wd),
            macs=int(np.prod(wd.shape)) * xd.shape[0],
        )

    def softmax_xent(self, logits: Var, labels) -> Var:
        labels = np.asarray(labels)
        loss, probs = layers.softmax_xent(logits.data, labels)
        out = np.asarray(loss, dtype=logits.data.dtype)
        return self._record(
            "softmax_xent", (logits,), out,
            lambda g: (g * layers.softmax_xent_backward(probs, labels),),
        )

    def sum(self, x: Var) -> Var:
        shape = x.shape
        return self._record(
            "sum", (x,), np.asarray(x.data.sum()),
            lambda g: (np.broadcast_to(g, shape).astype(x.data.dtype),),
        )

    def dot(self, x: Var, weights: np.ndarray) -> Var:
        """``sum(x * weights)`` with a constant ``weights`` array."""
        weights = np.asarray(weights, dtype=x.data.dtype)
        return self._record(
            "dot", (x,), np.asarray((x.data * weights).sum()), lambda g: (g * weights,)
        )

    def activation_pattern(self) -> list[np.ndarray]:
        """ReLU masks and max-pool argmaxes; the loss is smooth while these hold."""
        return [n.pattern for n in self.nodes if n.pattern is not None]

    def kink_margin(self) -> float:
        """Smallest distance of any ReLU input from 0 or max-pool winner from
        its runner-up (positions tied at a zero plateau excluded)."""
        margin = np.inf
        for n in self.nodes:
            if n.op == "relu":
                a = np.abs(n.inputs[0].data)
                margin = min(margin, a.min())
            elif n.op == "maxpool":
                out = n.out.data
                win = layers.maxpool_windows(n.inputs[0].data, *n.meta)
                gap = out - np.sort(win, axis=-1)[..., -2]
                live = out > 0
                if live.any():
                    margin = min(margin, gap[live].min())
        return float(margin)

    # -- reverse pass ---------------------------------------------------------
    def backward(self, loss: Var) -> None:
        """Accumulate d(loss)/d(parameter) into every reached ``Parameter.grad``.

        Input variables created with ``requires_grad=True`` receive ``.grad``.
        """
        if not any(n.out is loss for n in self.nodes):
            raise RuntimeError("backward called before a forward pass produced this loss")
        if loss.data.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                inp.grad = gi if inp.grad is None else inp.grad + gi
        for v in self._leaves.values():
            if v.grad is not None:
                v.param.grad += v.grad
