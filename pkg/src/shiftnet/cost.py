"""Static cost model: parameters, multiply-accumulates, receptive fields.

FLOPs are counted as multiply-accumulates (MACs). By default only
convolutions and the fully connected layer contribute; batch-norm and
pooling terms are itemized and can be switched on. Shift layers cost
nothing and appear in the breakdown with zero parameters and zero MACs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .blocks import BlockKind, BlockSpec
from .netspec import NetworkSpec, SpecError
from .shift import NeighborhoodKind, build_neighborhood, build_plan

Offset = tuple[int, int]
OffsetSet = frozenset  # of Offset


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str  # conv, fc, bn, pool, shift
    params: int
    flops: int


@dataclass
class CostReport:
    network: str
    resolution: tuple[int, int]
    layers: list[LayerCost] = field(default_factory=list)
    receptive_fields: dict[str, OffsetSet] = field(default_factory=dict)

    @property
    def total_params(self) -> int:
        return sum(layer.params for layer in self.layers)

    @property
    def total_flops(self) -> int:
        return sum(layer.flops for layer in self.layers)

    def machine_lines(self) -> list[str]:
        return [f"params={self.total_params}", f"flops={self.total_flops}"]


def count(spec: NetworkSpec, resolution: tuple[int, int] | None = None,
          include_bn_flops: bool = False, include_pool_flops: bool = False) -> CostReport:
    if resolution is not None:
        spec = spec.with_input(*resolution)
    try:
        spec.validate()
    except SpecError as exc:
        raise ValueError(f"resolution {spec.input[1:]} incompatible with {spec.name}: {exc}") from None

    report = CostReport(spec.name, spec.input[1:])
    add = report.layers.append
    bn_on, pool_on = include_bn_flops, include_pool_flops

    def conv(name, cin, cout, k, h, w):
        add(LayerCost(name, "conv", cout * cin * k * k, cout * h * w * cin * k * k))

    def bn(name, c, h, w):
        add(LayerCost(name, "bn", 2 * c, c * h * w if bn_on else 0))

    def pool(name, c, h, w, window):
        add(LayerCost(name, "pool", 0, c * h * w * window if pool_on else 0))

    c, h, w = spec.input
    if spec.stem:
        s = spec.stem
        p = s.kernel // 2
        h, w = (h + 2 * p - s.kernel) // s.stride + 1, (w + 2 * p - s.kernel) // s.stride + 1
        conv("stem.conv", c, s.out_channels, s.kernel, h, w)
        bn("stem.bn", s.out_channels, h, w)
        c = s.out_channels
        if s.maxpool:
            h, w = (h - 1) // 2 + 1, (w - 1) // 2 + 1
            pool("stem.maxpool", c, h, w, 9)

    for name, b in spec.blocks():
        mid, cout = b.mid_channels, b.out_channels
        ho, wo = ((h - 1) // 2 + 1, (w - 1) // 2 + 1) if b.downsample else (h, w)
        shifted = {"conv1": b.kind.multi, "conv2": b.kind.uses_shift, "conv3": b.kind.multi}
        # first conv always runs at input resolution
        if shifted["conv1"]:
            add(LayerCost(f"{name}.shift1", "shift", 0, 0))
        conv(f"{name}.conv1", c, mid, 1, h, w)
        bn(f"{name}.bn1", mid, h, w)
        if b.downsample and b.kind.uses_shift:
            pool(f"{name}.pool", mid, ho, wo, 4)
        if shifted["conv2"]:
            add(LayerCost(f"{name}.shift2", "shift", 0, 0))
        conv(f"{name}.conv2", mid, mid, 1 if b.kind.uses_shift else 3, ho, wo)
        bn(f"{name}.bn2", mid, ho, wo)
        if shifted["conv3"]:
            add(LayerCost(f"{name}.shift3", "shift", 0, 0))
        conv(f"{name}.conv3", mid, cout, 1, ho, wo)
        bn(f"{name}.bn3", cout, ho, wo)
        if b.projects:
            if b.downsample and b.kind.uses_shift:
                pool(f"{name}.proj_pool", c, ho, wo, 4)
            conv(f"{name}.proj", c, cout, 1, ho, wo)
            bn(f"{name}.proj_bn", cout, ho, wo)
        report.receptive_fields[name] = receptive_field(b)
        c, h, w = cout, ho, wo

    pool("head.avgpool", c, 1, 1, h * w)
    add(LayerCost("head.fc", "fc", spec.classes * c + spec.classes, spec.classes * c))
    return report


# -- receptive fields ---------------------------------------------------------

ORIGIN: OffsetSet = frozenset({(0, 0)})
SQUARE3: OffsetSet = frozenset((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1))


def minkowski(a: OffsetSet, b: OffsetSet) -> OffsetSet:
    return frozenset((ay + by, ax + bx) for ay, ax in a for by, bx in b)


def shift_offsets(channels: int, kind: NeighborhoodKind) -> OffsetSet:
    """Offsets a shift over ``channels`` actually applies (empty groups drop out)."""
    return frozenset(build_plan(channels, kind).assignment)


def receptive_field(spec: BlockSpec) -> OffsetSet:
    """Offsets of block inputs that can reach the output at the origin.

    Computed at unit stride: pooling and stride scaling are ignored.
    """
    if spec.kind is BlockKind.BOTTLENECK:
        return SQUARE3  # 1x1, 3x3, 1x1 main path; shortcut adds only the origin
    mid = shift_offsets(spec.mid_channels, spec.neighborhood)
    if spec.kind is BlockKind.SINGLE_SHIFT:
        return mid | ORIGIN
    first = shift_offsets(spec.in_channels, spec.neighborhood)
    middle = mid | ORIGIN  # inner residual bypasses the middle shift
    return minkowski(minkowski(first, middle), mid) | ORIGIN


def neighborhood_set(kind) -> OffsetSet:
    return frozenset(build_neighborhood(kind).offsets)


def render_offsets(offsets: OffsetSet, radius: int | None = None) -> str:
    """ASCII grid: '#' reachable, '.' not reachable; an unreachable origin shows as 'o'."""
    if radius is None:
        radius = max(max(abs(dy), abs(dx)) for dy, dx in offsets)
    rows = []
    for dy in range(-radius, radius + 1):
        row = []
        for dx in range(-radius, radius + 1):
            if (dy, dx) in offsets:
                row.append("#")
            else:
                row.append("o" if (dy, dx) == (0, 0) else ".")
        rows.append(" ".join(row))
    return "\n".join(rows)
