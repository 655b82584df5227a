"""Declarative network descriptions, the builtin architectures, and the
YAML config format.

Config schema (all keys required unless noted; ``stem`` may be ``null``)::

    network:
      name: <str>
      input:
        channels: <int>
        height: <int>
        width: <int>
      stem:
        out_channels: <int>
        kernel: <1|3|7>
        stride: <1|2>
        maxpool: <bool>          # 3x3 stride-2 max pool after the stem conv
      stages:
        - block: <bottleneck|single_shift|multi_shift|flattened_multi_shift>
          neighborhood: <8c|4c|8c-no|4c-no|none>
          out_channels: <int>
          repeats: <int>
          downsample_first: <bool>
      head:
        classes: <int>

:func:`render_config` always emits exactly this layout and key order.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np
import yaml

from .autodiff import Graph, Parameter, Var
from .blocks import (BlockKind, BlockParams, BlockSpec, block_forward,
                     he_normal, init_block_params)
from .layers import BatchNormParams, Conv2dParams
from .shift import NeighborhoodKind


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SpecError(ValueError):
    """A structurally inconsistent network spec."""


@dataclass(frozen=True)
class StemSpec:
    out_channels: int = 64
    kernel: int = 7
    stride: int = 2
    maxpool: bool = True


@dataclass(frozen=True)
class StageSpec:
    block: BlockKind
    neighborhood: NeighborhoodKind
    out_channels: int
    repeats: int
    downsample_first: bool = False

    def __post_init__(self):
        object.__setattr__(self, "block", BlockKind.parse(self.block))
        object.__setattr__(self, "neighborhood", NeighborhoodKind.parse(self.neighborhood))


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input: tuple[int, int, int]
    stem: StemSpec | None
    stages: tuple[StageSpec, ...]
    classes: int = 1000

    def with_input(self, height: int, width: int) -> "NetworkSpec":
        return replace(self, input=(self.input[0], height, width))

    @property
    def depth(self) -> int:
        """Weighted layers on the main path: stem conv, 3 per block, fc."""
        return (1 if self.stem else 0) + 3 * sum(s.repeats for s in self.stages) + 1

    def blocks(self) -> Iterator[tuple[str, BlockSpec]]:
        cin = self.stem.out_channels if self.stem else self.input[0]
        for si, stage in enumerate(self.stages):
            for bi in range(stage.repeats):
                spec = BlockSpec(stage.block, cin, stage.out_channels, stage.neighborhood,
                                 downsample=stage.downsample_first and bi == 0)
                yield f"stage{si + 1}.block{bi + 1}", spec
                cin = stage.out_channels

    def trace(self) -> list[tuple[str, tuple[int, int, int]]]:
        """(layer name, (c, h, w)) after the stem and after every block.

        Raises :class:`SpecError` naming the offending stage when a shape
        constraint fails.
        """
        c, h, w = self.input
        rows = []
        if self.stem:
            conv = Conv2dParams(c, self.stem.out_channels, self.stem.kernel, self.stem.stride)
            h, w = conv.output_size(h, w)
            if self.stem.maxpool:
                h, w = (h - 1) // 2 + 1, (w - 1) // 2 + 1
            c = self.stem.out_channels
            rows.append(("stem", (c, h, w)))
        prev_out = 0
        for si, stage in enumerate(self.stages):
            label = f"stage{si + 1}"
            if stage.repeats < 1:
                raise SpecError(f"{label}: repeats must be >= 1")
            if stage.out_channels < prev_out:
                raise SpecError(f"{label}: output channels decrease ({prev_out} -> {stage.out_channels})")
            prev_out = stage.out_channels
            for bi in range(stage.repeats):
                if stage.downsample_first and bi == 0:
                    if stage.block.uses_shift and (h % 2 or w % 2):
                        raise SpecError(f"{label}: cannot halve odd spatial dims {h}x{w}")
                    h, w = (h - 1) // 2 + 1, (w - 1) // 2 + 1
                rows.append((f"{label}.block{bi + 1}", (stage.out_channels, h, w)))
        return rows

    def validate(self) -> None:
        c, h, w = self.input
        if min(c, h, w) < 1 or self.classes < 1:
            raise SpecError("input dims and class count must be positive")
        if not self.stages:
            raise SpecError("network needs at least one stage")
        if self.stem and self.stem.kernel not in (1, 3, 7):
            raise SpecError(f"stem: kernel must be 1, 3 or 7, got {self.stem.kernel}")
        if self.stem and self.stem.stride not in (1, 2):
            raise SpecError(f"stem: stride must be 1 or 2, got {self.stem.stride}")
        for si, stage in enumerate(self.stages):
            try:
                BlockSpec(stage.block, 1, stage.out_channels, stage.neighborhood)
            except ValueError as exc:
                raise SpecError(f"stage{si + 1}: {exc}") from None
        self.trace()


# -- builtins -----------------------------------------------------------------

_RESNET101_STAGES = ((256, 3), (512, 4), (1024, 23), (2048, 3))
_FLATTENED35_STAGES = ((256, 1), (512, 1), (1024, 8), (2048, 1))
_FAMILIES = {
    "resnet101": (BlockKind.BOTTLENECK, _RESNET101_STAGES),
    "shift101": (BlockKind.SINGLE_SHIFT, _RESNET101_STAGES),
    "multishift101": (BlockKind.MULTI_SHIFT, _RESNET101_STAGES),
    "flattened35": (BlockKind.FLATTENED_MULTI_SHIFT, _FLATTENED35_STAGES),
}


def builtin_names() -> list[str]:
    names = ["resnet101"]
    for fam in ("shift101", "multishift101", "flattened35"):
        names += [f"{fam}-{k.value}" for k in NeighborhoodKind]
    return names


def builtin_spec(name: str, neighborhood: str | NeighborhoodKind | None = None) -> NetworkSpec:
    """One of the four ImageNet architectures.

    ``name`` may carry the neighborhood as a suffix (``"multishift101-4c"``);
    shift families default to 4-connected.
    """
    family, _, suffix = name.lower().partition("-")
    if family not in _FAMILIES:
        raise KeyError(f"unknown builtin {name!r}; known: {', '.join(builtin_names())}")
    block, stages = _FAMILIES[family]
    if block is BlockKind.BOTTLENECK:
        if suffix:
            raise KeyError(f"resnet101 takes no neighborhood suffix (got {name!r})")
        hood = NeighborhoodKind.ORIGIN_ONLY
    else:
        try:
            hood = NeighborhoodKind.parse(suffix or neighborhood or NeighborhoodKind.FOUR_CONNECTED)
        except ValueError as exc:
            raise KeyError(f"{name!r}: {exc}") from None
    full = family if block is BlockKind.BOTTLENECK else f"{family}-{hood.value}"
    return NetworkSpec(
        name=full,
        input=(3, 224, 224),
        stem=StemSpec(),
        stages=tuple(StageSpec(block, hood, c, r, downsample_first=i > 0)
                     for i, (c, r) in enumerate(stages)),
        classes=1000,
    )


# -- config text --------------------------------------------------------------

def render_config(spec: NetworkSpec) -> str:
    c, h, w = spec.input
    out = ["network:", f"  name: {_quote(spec.name)}", "  input:",
           f"    channels: {c}", f"    height: {h}", f"    width: {w}"]
    if spec.stem is None:
        out.append("  stem: null")
    else:
        s = spec.stem
        out += ["  stem:", f"    out_channels: {s.out_channels}", f"    kernel: {s.kernel}",
                f"    stride: {s.stride}", f"    maxpool: {_bool(s.maxpool)}"]
    out.append("  stages:")
    for st in spec.stages:
        out += [f"    - block: {st.block.value}",
                f"      neighborhood: {st.neighborhood.value}",
                f"      out_channels: {st.out_channels}",
                f"      repeats: {st.repeats}",
                f"      downsample_first: {_bool(st.downsample_first)}"]
    out += ["  head:", f"    classes: {spec.classes}"]
    return "\n".join(out) + "\n"


def _bool(v: bool) -> str:
    return "true" if v else "false"


def _quote(s: str) -> str:
    return yaml.safe_dump(s, default_style=None).splitlines()[0] if s else '""'


def _line(node) -> int:
    return node.start_mark.line + 1


def _mapping(node, keys: tuple[str, ...], what: str) -> dict:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{what} must be a mapping", _line(node))
    found = {}
    for k, v in node.value:
        key = k.value
        if key not in keys:
            raise ConfigError(f"unknown key {key!r} in {what}; expected one of {', '.join(keys)}", _line(k))
        if key in found:
            raise ConfigError(f"duplicate key {key!r} in {what}", _line(k))
        found[key] = v
    missing = [k for k in keys if k not in found]
    if missing:
        raise ConfigError(f"{what} is missing {', '.join(missing)}", _line(node))
    return found


def _scalar(node, what: str):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{what} must be a scalar", _line(node))
    tag = node.tag.rsplit(":", 1)[-1]
    if tag == "int":
        return int(node.value, 0)
    if tag == "bool":
        return node.value.lower() in ("true", "yes", "on")
    if tag == "null":
        return None
    return node.value


def _int(node, what: str, allowed=None) -> int:
    v = _scalar(node, what)
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ConfigError(f"{what} must be a positive integer, got {node.value!r}", _line(node))
    if allowed and v not in allowed:
        raise ConfigError(f"{what} must be one of {allowed}, got {v}", _line(node))
    return v


def _flag(node, what: str) -> bool:
    v = _scalar(node, what)
    if not isinstance(v, bool):
        raise ConfigError(f"{what} must be true or false, got {node.value!r}", _line(node))
    return v


def _enum(node, parse, what: str):
    try:
        return parse(_scalar(node, what))
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}", _line(node)) from None


def parse_config(text: str) -> NetworkSpec:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed config: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from None
    if root is None:
        raise ConfigError("empty config")
    net = _mapping(root, ("network",), "document")["network"]
    f = _mapping(net, ("name", "input", "stem", "stages", "head"), "network")
    name = str(_scalar(f["name"], "network.name"))
    inp = _mapping(f["input"], ("channels", "height", "width"), "input")
    shape = tuple(_int(inp[k], f"input.{k}") for k in ("channels", "height", "width"))
    stem = None
    if not (isinstance(f["stem"], yaml.ScalarNode) and _scalar(f["stem"], "stem") is None):
        sm = _mapping(f["stem"], ("out_channels", "kernel", "stride", "maxpool"), "stem")
        stem = StemSpec(_int(sm["out_channels"], "stem.out_channels"),
                        _int(sm["kernel"], "stem.kernel", (1, 3, 7)),
                        _int(sm["stride"], "stem.stride", (1, 2)),
                        _flag(sm["maxpool"], "stem.maxpool"))
    if not isinstance(f["stages"], yaml.SequenceNode) or not f["stages"].value:
        raise ConfigError("stages must be a non-empty list", _line(f["stages"]))
    stages = []
    for i, node in enumerate(f["stages"].value):
        what = f"stages[{i}]"
        st = _mapping(node, ("block", "neighborhood", "out_channels", "repeats",
                             "downsample_first"), what)
        stages.append(StageSpec(
            _enum(st["block"], BlockKind.parse, f"{what}.block"),
            _enum(st["neighborhood"], NeighborhoodKind.parse, f"{what}.neighborhood"),
            _int(st["out_channels"], f"{what}.out_channels"),
            _int(st["repeats"], f"{what}.repeats"),
            _flag(st["downsample_first"], f"{what}.downsample_first"),
        ))
    head = _mapping(f["head"], ("classes",), "head")
    spec = NetworkSpec(name, shape, stem, tuple(stages), _int(head["classes"], "head.classes"))
    try:
        spec.validate()
    except SpecError as exc:
        raise ConfigError(str(exc), _line(f["stages"])) from None
    return spec


def load_spec(source: str) -> NetworkSpec:
    """A builtin name or a path to a config file."""
    try:
        return builtin_spec(source)
    except KeyError:
        pass
    with open(source) as fh:
        return parse_config(fh.read())


# -- runnable networks --------------------------------------------------------

@dataclass
class Network:
    spec: NetworkSpec
    params: dict[str, Parameter]
    bn: dict[str, BatchNormParams]
    blocks: list[tuple[str, BlockSpec, BlockParams]] = field(default_factory=list)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def forward(self, g: Graph, x) -> Var:
        """Logits of shape (n, classes)."""
        h = x if isinstance(x, Var) else g.input(x)
        if self.spec.stem:
            s = self.spec.stem
            h = g.conv2d(h, self.params["stem.conv.weight"], s.stride)
            h = g.relu(g.batchnorm(h, self.bn["stem.bn"], self.params["stem.bn.gamma"],
                                   self.params["stem.bn.beta"]))
            if s.maxpool:
                h = g.maxpool(h)
        for _, spec, bp in self.blocks:
            h = block_forward(g, h, spec, bp)
        h = g.global_avgpool(h)
        return g.linear(h, self.params["fc.weight"], self.params["fc.bias"])

    def loss(self, x, labels, train: bool = True) -> tuple[Graph, Var, Var]:
        g = Graph(train=train)
        logits = self.forward(g, x)
        return g, logits, g.softmax_xent(logits, labels)

    def predict(self, x, train: bool = False) -> np.ndarray:
        return self.forward(Graph(train=train), x).data


def build(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> Network:
    """Materialize ``spec`` with He-normal weights and unit/zero BN affine terms."""
    spec.validate()
    rng = np.random.default_rng(seed)
    params: dict[str, Parameter] = {}
    bns: dict[str, BatchNormParams] = {}
    channels = spec.input[0]
    if spec.stem:
        s = spec.stem
        shape = Conv2dParams(channels, s.out_channels, s.kernel, s.stride).weight_shape
        params["stem.conv.weight"] = Parameter("stem.conv.weight", he_normal(rng, shape, dtype))
        bn = bns["stem.bn"] = BatchNormParams(s.out_channels, dtype=dtype)
        params["stem.bn.gamma"] = Parameter("stem.bn.gamma", bn.gamma, decay=False)
        params["stem.bn.beta"] = Parameter("stem.bn.beta", bn.beta, decay=False)
        channels = s.out_channels
    blocks = []
    for name, bspec in spec.blocks():
        bp = init_block_params(bspec, rng, dtype, prefix=name + ".")
        for local, p in bp.params.items():
            params[p.name] = p
        for local, bn in bp.bn.items():
            bns[f"{name}.{local}"] = bn
        blocks.append((name, bspec, bp))
        channels = bspec.out_channels
    params["fc.weight"] = Parameter(
        "fc.weight", he_normal(rng, (spec.classes, channels), dtype))
    params["fc.bias"] = Parameter("fc.bias", np.zeros(spec.classes, dtype), decay=False)
    return Network(spec, params, bns, blocks)


def describe(spec: NetworkSpec) -> list[dict]:
    """One row per stem/block: kind, widths and output shape."""
    spec.validate()
    shapes = dict(spec.trace())
    rows = []
    if spec.stem:
        s = spec.stem
        rows.append({"layer": "stem", "kind": f"conv{s.kernel}x{s.kernel}/s{s.stride}"
                     + ("+maxpool" if s.maxpool else ""),
                     "neighborhood": "-", "in": spec.input[0], "mid": "-",
                     "out": s.out_channels, "shape": shapes["stem"]})
    for name, b in spec.blocks():
        rows.append({"layer": name, "kind": b.kind.value,
                     "neighborhood": b.neighborhood.value if b.kind.uses_shift else "-",
                     "in": b.in_channels, "mid": b.mid_channels, "out": b.out_channels,
                     "shape": shapes[name]})
    return rows


def toy_spec(block="multi_shift", neighborhood="4c", width: int = 36, classes: int = 3,
             size: int = 12, maxpool: bool = True, name: str | None = None) -> NetworkSpec:
    """A two-stage network small enough for finite differences and desk training.

    ``width`` 36 gives bottleneck-style blocks 9 middle channels, so every
    8-connected offset receives a channel.
    """
    block = BlockKind.parse(block)
    hood = NeighborhoodKind.parse(neighborhood)
    return NetworkSpec(
        name=name or f"toy-{block.value}-{hood.value}",
        input=(3, size, size),
        stem=StemSpec(out_channels=12, kernel=3, stride=1, maxpool=maxpool),
        stages=(StageSpec(block, hood, width, 1), StageSpec(block, hood, width, 1, True)),
        classes=classes,
    )
