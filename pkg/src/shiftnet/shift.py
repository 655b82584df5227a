"""The parameter-free shift operation.

Each channel plane is translated by one offset ``(dy, dx)`` from a small
neighbourhood. Channels are split into ``len(offsets)`` contiguous groups of
``M // K`` channels; the ``M % K`` leftover channels stay unmoved. Vacated
positions are zero-filled and values pushed past the border are dropped.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

Offset = tuple[int, int]


class NeighborhoodKind(str, enum.Enum):
    EIGHT_CONNECTED = "8c"
    FOUR_CONNECTED = "4c"
    EIGHT_CONNECTED_NO_ORIGIN = "8c-no"
    FOUR_CONNECTED_NO_ORIGIN = "4c-no"
    ORIGIN_ONLY = "none"

    @classmethod
    def parse(cls, value: "str | NeighborhoodKind") -> "NeighborhoodKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown neighborhood {value!r}; valid kinds: {valid}") from None


_EIGHT = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1))
_FOUR = ((-1, 0), (0, -1), (0, 0), (0, 1), (1, 0))


@dataclass(frozen=True)
class Neighborhood:
    kind: NeighborhoodKind
    offsets: tuple[Offset, ...]

    def __len__(self) -> int:
        return len(self.offsets)


def build_neighborhood(kind: "str | NeighborhoodKind") -> Neighborhood:
    kind = NeighborhoodKind.parse(kind)
    if kind is NeighborhoodKind.EIGHT_CONNECTED:
        offsets = _EIGHT
    elif kind is NeighborhoodKind.FOUR_CONNECTED:
        offsets = _FOUR
    elif kind is NeighborhoodKind.EIGHT_CONNECTED_NO_ORIGIN:
        offsets = tuple(o for o in _EIGHT if o != (0, 0))
    elif kind is NeighborhoodKind.FOUR_CONNECTED_NO_ORIGIN:
        offsets = tuple(o for o in _FOUR if o != (0, 0))
    else:
        offsets = ((0, 0),)
    return Neighborhood(kind, offsets)


@dataclass(frozen=True)
class ShiftPlan:
    channels: int
    neighborhood: Neighborhood
    assignment: tuple[Offset, ...]

    @property
    def group_size(self) -> int:
        return self.channels // len(self.neighborhood)

    def segments(self) -> list[tuple[Offset, int, int]]:
        """Runs of consecutive channels sharing an offset, as ``(offset, start, stop)``."""
        runs = []
        start = 0
        for c in range(1, self.channels + 1):
            if c == self.channels or self.assignment[c] != self.assignment[start]:
                runs.append((self.assignment[start], start, c))
                start = c
        return runs


@lru_cache(maxsize=None)
def _plan(channels: int, kind: NeighborhoodKind) -> ShiftPlan:
    hood = build_neighborhood(kind)
    group = channels // len(hood)
    assignment = [off for off in hood.offsets for _ in range(group)]
    assignment += [(0, 0)] * (channels - len(assignment))
    return ShiftPlan(channels, hood, tuple(assignment))


def build_plan(channels: int, kind: "str | NeighborhoodKind") -> ShiftPlan:
    if channels < 1:
        raise ValueError(f"a shift plan needs at least one channel, got {channels}")
    return _plan(int(channels), NeighborhoodKind.parse(kind))


def _translate(x: np.ndarray, plan: ShiftPlan, sign: int) -> np.ndarray:
    if x.ndim != 4 or x.shape[1] != plan.channels:
        raise ValueError(
            f"shift plan is for {plan.channels} channels, input has shape {x.shape}"
        )
    _, _, h, w = x.shape
    out = np.zeros_like(x)
    for (dy, dx), c0, c1 in plan.segments():
        dy, dx = sign * dy, sign * dx
        if abs(dy) >= h or abs(dx) >= w:
            continue
        out[:, c0:c1, max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)] = x[
            :, c0:c1, max(-dy, 0):h - max(dy, 0), max(-dx, 0):w - max(dx, 0)
        ]
    return out


def shift_forward(x: np.ndarray, plan: ShiftPlan) -> np.ndarray:
    """``out[n, c, y, x] = in[n, c, y - dy, x - dx]`` for the channel's offset."""
    return _translate(x, plan, 1)


def shift_adjoint(g: np.ndarray, plan: ShiftPlan) -> np.ndarray:
    """Transpose of :func:`shift_forward`: every offset negated."""
    return _translate(g, plan, -1)
