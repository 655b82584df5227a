"""SGD training at desk scale, finite-difference gradient checks, datasets
and checkpoints.
"""
from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .autodiff import Parameter
from .netspec import Network, NetworkSpec, build, parse_config, render_config
from .tensor import read_tensor

# -- optimizer ----------------------------------------------------------------


@dataclass
class OptimizerState:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    step_epochs: int = 30
    gamma: float = 0.1
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")

    def lr_at(self, epoch: int) -> float:
        return step_lr(self.lr, epoch, self.step_epochs, self.gamma)


def step_lr(base_lr: float, epoch: int, step_epochs: int = 30, gamma: float = 0.1) -> float:
    """Base rate multiplied by ``gamma`` once every ``step_epochs`` epochs."""
    return base_lr * gamma ** (epoch // step_epochs)


def sgd_step(params: Iterable[Parameter], state: OptimizerState, lr: float | None = None) -> None:
    """``v <- m*v + g + wd*p``, ``p <- p - lr*v``; decay only where ``p.decay``."""
    lr = state.lr if lr is None else lr
    for p in params:
        g = p.grad
        if p.decay and state.weight_decay:
            g = g + state.weight_decay * p.data
        v = state.buffers.get(p.name)
        if v is None:
            v = state.buffers[p.name] = np.zeros_like(p.data)
        v *= state.momentum
        v += g
        p.data -= lr * v


# -- data -----------------------------------------------------------------------


def synthetic_dataset(samples: int = 64, classes: int = 4, shape=(3, 8, 8),
                      noise: float = 0.5, seed: int = 0, dtype=np.float32):
    """Seeded Gaussian class prototypes plus per-sample Gaussian noise.

    Labels cycle through the classes so every class is represented.
    """
    if samples < 1 or classes < 1:
        raise ValueError("need at least one sample and one class")
    rng = np.random.default_rng(seed)
    prototypes = rng.standard_normal((classes, *shape))
    labels = np.arange(samples) % classes
    x = prototypes[labels] + noise * rng.standard_normal((samples, *shape))
    return x.astype(dtype), labels


def load_directory(path: str | os.PathLike, manifest: str = "manifest.tsv", dtype=np.float32):
    """Samples stored one tensor file each, listed as ``path<TAB>label`` lines."""
    root = Path(path)
    xs, ys = [], []
    with open(root / manifest) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                rel, label = line.split("\t")
                ys.append(int(label))
            except ValueError:
                raise ValueError(f"{manifest}:{lineno}: expected 'path<TAB>label'") from None
            t = read_tensor(root / rel, dtype)
            xs.append(t.reshape(t.shape[-3:]) if t.shape[0] == 1 else t)
    if not xs:
        raise ValueError(f"{root / manifest} lists no samples")
    return np.stack(xs), np.asarray(ys)


def random_resized_crop(x: np.ndarray, rng: np.random.Generator,
                        scale=(0.5, 1.0)) -> np.ndarray:
    """Crop a random fraction of each side, then resize back by nearest neighbour."""
    n, _, h, w = x.shape
    out = np.empty_like(x)
    for i in range(n):
        frac = rng.uniform(*scale)
        ch, cw = max(1, round(h * frac)), max(1, round(w * frac))
        y0, x0 = rng.integers(0, h - ch + 1), rng.integers(0, w - cw + 1)
        rows = y0 + (np.arange(h) * ch) // h
        cols = x0 + (np.arange(w) * cw) // w
        out[i] = x[i][:, rows][:, :, cols]
    return out


# -- training loop ----------------------------------------------------------------


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    loss: float
    acc: float
    lr: float


def train_loop(net: Network, x: np.ndarray, y: np.ndarray, epochs: int,
               state: OptimizerState | None = None, batch_size: int = 128,
               seed: int = 0, augment: bool = False,
               target_acc: float | None = None) -> list[HistoryRow]:
    """Minibatch SGD with the step schedule; one history row per epoch.

    Loss and accuracy are averaged over the epoch's training batches. With
    ``target_acc`` set, training stops after the first epoch reaching it.
    """
    if len(x) == 0:
        raise ValueError("cannot train on an empty dataset")
    y = np.asarray(y)
    if y.min() < 0 or y.max() >= net.spec.classes:
        raise ValueError(f"labels must lie in [0, {net.spec.classes})")
    state = state or OptimizerState()
    rng = np.random.default_rng(seed)
    params = net.parameters()
    history = []
    for epoch in range(epochs):
        lr = state.lr_at(epoch)
        order = rng.permutation(len(x))
        total_loss, correct = 0.0, 0
        for start in range(0, len(x), batch_size):
            idx = order[start:start + batch_size]
            xb = x[idx]
            if augment:
                xb = random_resized_crop(xb, rng)
            net.zero_grad()
            g, logits, loss = net.loss(xb, y[idx], train=True)
            g.backward(loss)
            sgd_step(params, state, lr)
            total_loss += float(loss.data) * len(idx)
            correct += int((logits.data.argmax(axis=1) == y[idx]).sum())
        row = HistoryRow(epoch, total_loss / len(x), correct / len(x), lr)
        history.append(row)
        if target_acc is not None and row.acc >= target_acc:
            break
    return history


def history_csv(history: list[HistoryRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "loss", "acc", "lr"])
    for r in history:
        writer.writerow([r.epoch, repr(r.loss), repr(r.acc), repr(r.lr)])
    return buf.getvalue()


def accuracy(net: Network, x: np.ndarray, y: np.ndarray, train_mode: bool = False) -> float:
    return float((net.predict(x, train=train_mode).argmax(axis=1) == np.asarray(y)).mean())


# -- gradient checking ------------------------------------------------------------


@dataclass
class GradcheckReport:
    max_rel_error: float
    checked: int
    worst: str
    per_param: dict[str, float]
    skipped: int = 0
    counts: dict[str, int] = field(default_factory=dict)

    def passed(self, tol: float = 1e-4) -> bool:
        """Below ``tol`` with every parameter buffer actually sampled."""
        return self.max_rel_error < tol and all(self.counts.values())


def rel_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients
    from amplifying finite-difference noise."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(spec: NetworkSpec, seed: int = 0, samples: int = 120,
              steps: tuple[float, ...] = (1e-5, 1e-6), batch: int = 4,
              kink_margin: float = 1e-6) -> GradcheckReport:
    """Compare backprop gradients with central differences in 64-bit.

    At least ``samples`` parameter entries are checked, spread over every
    parameter buffer (each buffer contributes at least one entry). A
    difference quotient only counts when both perturbed forward passes keep
    the unperturbed ReLU masks and max-pool choices, i.e. the step stayed on
    one smooth piece of the loss. Steps are tried in order; an entry whose
    every step crosses a kink is skipped and counted in ``skipped``. Input
    batches are redrawn (deterministically) until every ReLU input and
    max-pool winner is at least ``kink_margin`` away from its switch point.
    """
    net = build(spec, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    # redraw inputs until no activation sits within a step of a kink
    for _ in range(20):
        x = rng.standard_normal((batch, *spec.input))
        labels = rng.integers(0, spec.classes, batch)
        g, _, loss = net.loss(x, labels, train=True)
        if g.kink_margin() > kink_margin:
            break

    net.zero_grad()
    g.backward(loss)
    base = g.activation_pattern()

    def evaluate() -> float | None:
        g, _, loss = net.loss(x, labels, train=True)
        same = all(np.array_equal(a, b) for a, b in zip(base, g.activation_pattern()))
        return float(loss.data) if same else None

    params = net.parameters()
    per_buffer = max(1, -(-samples // len(params)))
    per_param: dict[str, float] = {}
    checked = skipped = 0
    counts: dict[str, int] = {}
    for p in params:
        flat, grad = p.data.reshape(-1), p.grad.reshape(-1)
        worst, done = 0.0, 0
        for i in rng.permutation(flat.size):
            if done == per_buffer:
                break
            orig = flat[i]
            err = None
            for h in steps:
                flat[i] = orig + h
                plus = evaluate()
                flat[i] = orig - h
                minus = evaluate()
                flat[i] = orig
                if plus is not None and minus is not None:
                    err = rel_error(grad[i], (plus - minus) / (2 * h))
                    break
            if err is None:
                skipped += 1
                continue
            worst = max(worst, err)
            done += 1
        checked += done
        counts[p.name] = done
        per_param[p.name] = worst
    name = max(per_param, key=per_param.get)
    return GradcheckReport(per_param[name], checked, name, per_param, skipped, counts)


# -- checkpoints --------------------------------------------------------------------

CHECKPOINT_MAGIC = b"SHIFTCK1"


def _state_buffers(net: Network) -> list[tuple[str, np.ndarray]]:
    bufs = [(name, p.data) for name, p in net.params.items()]
    for name, bn in net.bn.items():
        bufs += [(f"{name}.running_mean", bn.running_mean), (f"{name}.running_var", bn.running_var)]
    return bufs


def save_checkpoint(path: str | os.PathLike, net: Network) -> None:
    """Layout (little-endian): magic, u32 config length, config text, u32
    buffer count, then per buffer u32 ndim, ndim x u32 dims, float32 data.
    Buffers follow registry order, then BN running stats.
    """
    config = render_config(net.spec).encode()
    bufs = _state_buffers(net)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(config)))
        fh.write(config)
        fh.write(struct.pack("<I", len(bufs)))
        for _, data in bufs:
            fh.write(struct.pack(f"<I{data.ndim}I", data.ndim, *data.shape))
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def load_checkpoint(path: str | os.PathLike, dtype=np.float32) -> Network:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a shiftnet checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    (n,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    spec = parse_config(blob[pos:pos + n].decode())
    pos += n
    net = build(spec, dtype=dtype)
    bufs = _state_buffers(net)
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if count != len(bufs):
        raise ValueError(f"{path}: expected {len(bufs)} buffers, found {count}")
    for name, target in bufs:
        (ndim,) = struct.unpack_from("<I", blob, pos)
        shape = struct.unpack_from(f"<{ndim}I", blob, pos + 4)
        pos += 4 + 4 * ndim
        if tuple(shape) != target.shape:
            raise ValueError(f"{path}: buffer {name} has shape {shape}, expected {target.shape}")
        size = int(np.prod(shape))
        target[...] = np.frombuffer(blob, "<f4", size, pos).reshape(shape)
        pos += 4 * size
    return net
