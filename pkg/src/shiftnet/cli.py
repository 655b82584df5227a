"""``shiftnet`` command line: describe, cost, rf, gradcheck, shift-demo, train.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import cost as costmod
from .blocks import BlockKind, BlockSpec
from .netspec import (NetworkSpec, build, builtin_names, builtin_spec, describe,
                      parse_config, toy_spec)
from .shift import NeighborhoodKind, build_plan, shift_forward
from .tensor import dumps_tensor, read_tensor

NEIGHBORHOODS = [k.value for k in NeighborhoodKind]
BLOCKS = [k.value for k in BlockKind]
GRADCHECK_MAX_PARAMS = 50_000


def _add_network_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--builtin", metavar="NAME",
                   help="builtin architecture: " + ", ".join(builtin_names()))
    g.add_argument("--config", metavar="PATH", help="network config file (YAML)")


def _resolution(p: argparse.ArgumentParser) -> None:
    p.add_argument("--resolution", nargs=2, type=int, metavar=("H", "W"))


def _load(args) -> NetworkSpec | None:
    if args.builtin:
        return builtin_spec(args.builtin)
    if args.config:
        with open(args.config) as fh:
            return parse_config(fh.read())
    return None


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shiftnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("describe", help="layer table of a network")
    _add_network_args(p)
    _resolution(p)

    p = sub.add_parser("cost", help="parameter and FLOP (MAC) counts")
    _add_network_args(p)
    _resolution(p)
    p.add_argument("--include-bn-flops", action="store_true")
    p.add_argument("--include-pool-flops", action="store_true")
    p.add_argument("--machine", action="store_true", help="emit only key=value lines")
    p.add_argument("--layers", action="store_true", help="print the per-layer breakdown")

    p = sub.add_parser("rf", help="receptive-field offset grids")
    _add_network_args(p, required=False)
    p.add_argument("--neighborhood", choices=NEIGHBORHOODS, default="4c",
                   help="neighborhood for the per-kind grids (no network given)")

    p = sub.add_parser("gradcheck", help="finite-difference gradient check (64-bit)")
    _add_network_args(p, required=False)
    p.add_argument("--block", choices=BLOCKS, default="multi_shift",
                   help="block kind of the toy network (no network given)")
    p.add_argument("--neighborhood", choices=NEIGHBORHOODS, default="4c")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=120)

    p = sub.add_parser("shift-demo", help="apply a shift to a tensor file")
    p.add_argument("--neighborhood", choices=NEIGHBORHOODS, required=True)
    p.add_argument("--in", dest="inp", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")

    p = sub.add_parser("train", help="SGD training at desk scale")
    _add_network_args(p, required=False)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--wd", type=float, default=5e-4)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--step-epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", default="synthetic", help="'synthetic' or a dataset directory")
    p.add_argument("--samples", type=int, default=64, help="synthetic dataset size")
    p.add_argument("--augment", action="store_true", help="random resized crop")
    p.add_argument("--out", metavar="FILE", help="history CSV (default: stdout)")
    p.add_argument("--checkpoint", metavar="FILE")
    return parser


def cmd_describe(args, out) -> int:
    spec = _load(args)
    if args.resolution:
        spec = spec.with_input(*args.resolution)
    rows = describe(spec)
    print(f"# {spec.name}  input={spec.input}  depth={spec.depth}", file=out)
    print(f"{'layer':<18}{'kind':<24}{'nbhd':<7}{'in':>6}{'mid':>6}{'out':>6}  output", file=out)
    for r in rows:
        c, h, w = r["shape"]
        print(f"{r['layer']:<18}{r['kind']:<24}{r['neighborhood']:<7}{r['in']:>6}"
              f"{str(r['mid']):>6}{r['out']:>6}  {c}x{h}x{w}", file=out)
    print(f"{'head':<18}{'avgpool+fc':<24}{'-':<7}{rows[-1]['out']:>6}{'-':>6}"
          f"{spec.classes:>6}  {spec.classes}", file=out)
    return 0


def cmd_cost(args, out) -> int:
    spec = _load(args)
    report = costmod.count(spec, tuple(args.resolution) if args.resolution else None,
                           include_bn_flops=args.include_bn_flops,
                           include_pool_flops=args.include_pool_flops)
    if not args.machine:
        h, w = report.resolution
        print(f"network     {report.network} @ {h}x{w}", file=out)
        print(f"parameters  {report.total_params:,} ({report.total_params / 1e6:.1f}M)", file=out)
        print(f"FLOPs (MAC) {report.total_flops:,} ({report.total_flops / 1e9:.2f}G)", file=out)
        if args.layers:
            for layer in report.layers:
                print(f"  {layer.name:<28}{layer.kind:<6}{layer.params:>12,}{layer.flops:>16,}",
                      file=out)
    for line in report.machine_lines():
        print(line, file=out)
    return 0


def _print_rf(label: str, offsets, out) -> None:
    print(f"[{label}]", file=out)
    print(costmod.render_offsets(offsets), file=out)
    print(f"rf_size={len(offsets)}", file=out)


def cmd_rf(args, out) -> int:
    spec = _load(args)
    if spec is None:
        for kind in BlockKind:
            b = BlockSpec(kind, 256, 256, args.neighborhood)
            label = kind.value if kind is BlockKind.BOTTLENECK else f"{kind.value} {args.neighborhood}"
            _print_rf(label, costmod.receptive_field(b), out)
        return 0
    spec.validate()
    seen = set()
    for name, b in spec.blocks():
        stage = name.split(".")[0]
        if stage in seen:
            continue
        seen.add(stage)
        hood = f" {b.neighborhood.value}" if b.kind.uses_shift else ""
        _print_rf(f"{stage} {b.kind.value}{hood} {b.in_channels}->{b.mid_channels}->{b.out_channels}",
                  costmod.receptive_field(b), out)
    return 0


def cmd_gradcheck(args, out) -> int:
    from .training import gradcheck
    spec = _load(args) or toy_spec(args.block, args.neighborhood)
    n_params = costmod.count(spec).total_params
    if n_params > GRADCHECK_MAX_PARAMS:
        raise ValueError(f"{spec.name} has {n_params:,} parameters; gradcheck is limited "
                         f"to {GRADCHECK_MAX_PARAMS:,}")
    report = gradcheck(spec, seed=args.seed, samples=args.samples)
    print(f"network={spec.name}", file=out)
    print(f"checked={report.checked}", file=out)
    print(f"skipped={report.skipped}", file=out)
    print(f"worst={report.worst}", file=out)
    print(f"max_rel_error={report.max_rel_error:.3e}", file=out)
    ok = report.passed(args.tol)
    print(f"result={'pass' if ok else 'fail'}", file=out)
    return 0 if ok else 1


def cmd_shift_demo(args, out) -> int:
    x = read_tensor(args.inp)
    y = shift_forward(x, build_plan(x.shape[1], args.neighborhood))
    with open(args.out, "w") as fh:
        fh.write(dumps_tensor(y))
    return 0


def cmd_train(args, out) -> int:
    from .training import (OptimizerState, history_csv, load_directory,
                           save_checkpoint, synthetic_dataset, train_loop)
    spec = _load(args)
    if args.data == "synthetic":
        if spec is None:
            spec = toy_spec("multi_shift", "4c", width=16, classes=4, size=8, maxpool=False)
        x, y = synthetic_dataset(args.samples, spec.classes, spec.input, seed=args.seed)
    else:
        x, y = load_directory(args.data)
        if spec is None:
            spec = toy_spec("multi_shift", "4c", width=16, classes=int(y.max()) + 1,
                            size=x.shape[2], maxpool=False)
            spec = NetworkSpec(spec.name, x.shape[1:], spec.stem, spec.stages, spec.classes)
        elif tuple(x.shape[1:]) != tuple(spec.input):
            raise ValueError(f"data samples are {x.shape[1:]}, network expects {spec.input}")
    net = build(spec, seed=args.seed)
    state = OptimizerState(lr=args.lr, momentum=args.momentum, weight_decay=args.wd,
                           step_epochs=args.step_epochs)
    history = train_loop(net, x, y, args.epochs, state, batch_size=args.batch,
                         seed=args.seed, augment=args.augment)
    text = history_csv(history)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        last = history[-1]
        print(f"epochs={len(history)} loss={last.loss:.6f} acc={last.acc:.4f}", file=out)
    else:
        out.write(text)
    if args.checkpoint:
        save_checkpoint(args.checkpoint, net)
    return 0


COMMANDS = {
    "describe": cmd_describe,
    "cost": cmd_cost,
    "rf": cmd_rf,
    "gradcheck": cmd_gradcheck,
    "shift-demo": cmd_shift_demo,
    "train": cmd_train,
}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.verb](args, out)
    except (KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"shiftnet {args.verb}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
