"""Dense rank-4 tensors in (n, c, h, w) layout.

Tensors are plain ``numpy.ndarray`` objects; this module only adds the few
primitives the rest of the package relies on, plus the text file format used
by ``shiftnet shift-demo``.
"""
from __future__ import annotations

import os
from typing import Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised for invalid tensor shapes or mismatched operands."""


def check_shape(shape: Sequence[int]) -> tuple[int, int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise ShapeError(f"expected a rank-4 shape (n, c, h, w), got {shape}")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all dimensions must be >= 1, got {shape}")
    return shape


def zeros(shape: Sequence[int], dtype=DEFAULT_DTYPE) -> np.ndarray:
    return np.zeros(check_shape(shape), dtype=dtype)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of an R x K and a K x S matrix."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def elementwise(op: str, a: np.ndarray, b=None) -> np.ndarray:
    """Apply ``add``, ``mul``, ``relu`` or ``scale`` pointwise.

    ``scale`` takes a scalar second operand; ``add`` and ``mul`` require
    operands of identical shape (no broadcasting).
    """
    a = np.asarray(a)
    if op == "relu":
        return np.maximum(a, 0).astype(a.dtype, copy=False)
    if op == "scale":
        return a * a.dtype.type(b) if np.issubdtype(a.dtype, np.floating) else a * b
    if op in ("add", "mul"):
        b = np.asarray(b)
        if a.shape != b.shape:
            raise ShapeError(f"{op}: shapes differ {a.shape} vs {b.shape}")
        return a + b if op == "add" else a * b
    raise ValueError(f"unknown elementwise op {op!r}")


def format_scalar(v) -> str:
    # shortest decimal that round-trips at the scalar's own precision
    return np.format_float_positional(v, unique=True, trim="-")


def dumps_tensor(x: np.ndarray) -> str:
    x = np.asarray(x)
    check_shape(x.shape)
    lines = [" ".join(str(s) for s in x.shape)]
    n, c, h, w = x.shape
    for row in x.reshape(n * c * h, w):
        lines.append(" ".join(format_scalar(v) for v in row))
    return "\n".join(lines) + "\n"


def loads_tensor(text: str, dtype=DEFAULT_DTYPE) -> np.ndarray:
    tokens = text.split()
    if len(tokens) < 4:
        raise ShapeError("tensor file is missing its 'n c h w' header")
    shape = check_shape([int(t) for t in tokens[:4]])
    values = tokens[4:]
    expected = int(np.prod(shape))
    if len(values) != expected:
        raise ShapeError(f"header {shape} needs {expected} values, found {len(values)}")
    return np.array(values, dtype=dtype).reshape(shape)


def write_tensor(path: str | os.PathLike, x: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_tensor(x))


def read_tensor(path: str | os.PathLike, dtype=DEFAULT_DTYPE) -> np.ndarray:
    with open(path) as fh:
        return loads_tensor(fh.read(), dtype=dtype)
