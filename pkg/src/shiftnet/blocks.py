"""Residual block designs: bottleneck, single-shift, multi-shift, flattened.

All blocks follow the ResNet v1 ordering: conv -> BN -> ReLU for every stage
except the last, whose ReLU is applied after the residual addition.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, Parameter, Var
from .layers import BatchNormParams, Conv2dParams
from .shift import NeighborhoodKind, ShiftPlan, build_plan


class BlockKind(str, enum.Enum):
    BOTTLENECK = "bottleneck"
    SINGLE_SHIFT = "single_shift"
    MULTI_SHIFT = "multi_shift"
    FLATTENED_MULTI_SHIFT = "flattened_multi_shift"

    @classmethod
    def parse(cls, value) -> "BlockKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown block kind {value!r}; valid kinds: {valid}") from None

    @property
    def uses_shift(self) -> bool:
        return self is not BlockKind.BOTTLENECK

    @property
    def multi(self) -> bool:
        return self in (BlockKind.MULTI_SHIFT, BlockKind.FLATTENED_MULTI_SHIFT)


@dataclass(frozen=True)
class BlockSpec:
    kind: BlockKind
    in_channels: int
    out_channels: int
    neighborhood: NeighborhoodKind = NeighborhoodKind.ORIGIN_ONLY
    downsample: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", BlockKind.parse(self.kind))
        object.__setattr__(self, "neighborhood", NeighborhoodKind.parse(self.neighborhood))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"channel counts must be positive: {self}")
        if self.kind is not BlockKind.FLATTENED_MULTI_SHIFT and self.out_channels % 4:
            raise ValueError(
                f"{self.kind.value} blocks need out_channels divisible by 4, got {self.out_channels}"
            )

    @property
    def mid_channels(self) -> int:
        if self.kind is BlockKind.FLATTENED_MULTI_SHIFT:
            return self.out_channels
        return self.out_channels // 4

    @property
    def projects(self) -> bool:
        return self.downsample or self.in_channels != self.out_channels

    def convs(self) -> list[tuple[str, Conv2dParams]]:
        """Convolutions of the block in execution order (main path, then shortcut)."""
        cin, mid, cout = self.in_channels, self.mid_channels, self.out_channels
        bottleneck = self.kind is BlockKind.BOTTLENECK
        stride = 2 if self.downsample and bottleneck else 1
        convs = [
            ("conv1", Conv2dParams(cin, mid, 1, 1)),
            ("conv2", Conv2dParams(mid, mid, 3 if bottleneck else 1, stride)),
            ("conv3", Conv2dParams(mid, cout, 1, 1)),
        ]
        if self.projects:
            convs.append(("proj", Conv2dParams(cin, cout, 1, stride)))
        return convs

    def shift_plans(self) -> dict[str, ShiftPlan]:
        """Shift layers keyed by the conv they feed."""
        if not self.kind.uses_shift:
            return {}
        mid = build_plan(self.mid_channels, self.neighborhood)
        if self.kind is BlockKind.SINGLE_SHIFT:
            return {"conv2": mid}
        return {"conv1": build_plan(self.in_channels, self.neighborhood),
                "conv2": mid, "conv3": mid}


@dataclass(frozen=True)
class ParamShape:
    name: str
    shape: tuple[int, ...]
    role: str  # "conv", "bn_gamma", "bn_beta", "fc_weight", "fc_bias"

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


_BN_FOR = {"conv1": "bn1", "conv2": "bn2", "conv3": "bn3", "proj": "proj_bn"}


def block_param_shapes(spec: BlockSpec) -> list[ParamShape]:
    shapes = []
    for name, conv in spec.convs():
        bn = _BN_FOR[name]
        shapes += [
            ParamShape(f"{name}.weight", conv.weight_shape, "conv"),
            ParamShape(f"{bn}.gamma", (conv.out_channels,), "bn_gamma"),
            ParamShape(f"{bn}.beta", (conv.out_channels,), "bn_beta"),
        ]
    return shapes


@dataclass
class BlockParams:
    params: dict[str, Parameter]
    bn: dict[str, BatchNormParams] = field(default_factory=dict)


def he_normal(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape, dtype=np.float64) * np.sqrt(2.0 / fan_in)).astype(dtype)


def init_block_params(spec: BlockSpec, rng: np.random.Generator,
                      dtype=np.float32, prefix: str = "") -> BlockParams:
    params: dict[str, Parameter] = {}
    bns: dict[str, BatchNormParams] = {}
    for ps in block_param_shapes(spec):
        full = prefix + ps.name
        if ps.role == "conv":
            params[ps.name] = Parameter(full, he_normal(rng, ps.shape, dtype))
        else:
            bn_name = ps.name.split(".")[0]
            bn = bns.get(bn_name)
            if bn is None:
                bn = bns[bn_name] = BatchNormParams(ps.shape[0], dtype=dtype)
            data = bn.gamma if ps.role == "bn_gamma" else bn.beta
            params[ps.name] = Parameter(full, data, decay=False)
    return BlockParams(params, bns)


def _conv_bn(g: Graph, x: Var, p: BlockParams, conv: str, stride: int = 1) -> Var:
    bn = _BN_FOR[conv]
    y = g.conv2d(x, p.params[f"{conv}.weight"], stride)
    return g.batchnorm(y, p.bn[bn], p.params[f"{bn}.gamma"], p.params[f"{bn}.beta"])


def _check_input(x: Var, spec: BlockSpec) -> None:
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"block expects {spec.in_channels} channels, got {x.shape[1]}")
    if spec.downsample and spec.kind.uses_shift and (x.shape[2] % 2 or x.shape[3] % 2):
        raise ValueError(f"downsampling shift block needs even spatial dims, got {x.shape[2:]}")


def block_forward(g: Graph, x: Var, spec: BlockSpec, p: BlockParams) -> Var:
    """Run one residual block through ``g``; BN mode follows ``g.train``."""
    _check_input(x, spec)
    if spec.kind is BlockKind.BOTTLENECK:
        stride = 2 if spec.downsample else 1
        h = g.relu(_conv_bn(g, x, p, "conv1"))
        h = g.relu(_conv_bn(g, h, p, "conv2", stride))
        h = _conv_bn(g, h, p, "conv3")
        shortcut = _conv_bn(g, x, p, "proj", stride) if spec.projects else x
        return g.relu(g.add(h, shortcut))

    plans = spec.shift_plans()
    h = x
    if "conv1" in plans:
        h = g.shift(h, plans["conv1"])
    h = g.relu(_conv_bn(g, h, p, "conv1"))
    if spec.downsample:
        h = g.avgpool(h)
    inner = h
    h = _conv_bn(g, g.shift(h, plans["conv2"]), p, "conv2")
    if spec.kind.multi:
        h = g.add(h, inner)
    h = g.relu(h)
    if "conv3" in plans:
        h = g.shift(h, plans["conv3"])
    h = _conv_bn(g, h, p, "conv3")
    if spec.projects:
        s = g.avgpool(x) if spec.downsample else x
        shortcut = _conv_bn(g, s, p, "proj")
    else:
        shortcut = x
    return g.relu(g.add(h, shortcut))
