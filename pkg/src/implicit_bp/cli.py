"""``implicit-bp train ...``: run a learning-rate sweep and write a CSV."""
from __future__ import annotations

import argparse
import sys

from . import bench
from .data import DataError
from .optimizers import METHODS, ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _clip(text):
    if text.lower() == "none":
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"clip must be a number or 'none', got {text!r}") from None


def _methods(text):
    out = tuple(v.strip() for v in text.split(","))
    bad = [m for m in out if m not in METHODS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="implicit-bp")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    t = sub.add_parser("train", help="train over an lr grid and seeds")
    t.add_argument("--dataset", required=True,
                   help="mnist | mnist-standin | json:PATH | csv:PATH | toy-quadratic | blobs | chorales")
    t.add_argument("--arch", default="mlp:784,32,10", help="mlp:D,H,...,C | ae:D,H,D | rnn:D,H,D")
    t.add_argument("--act", default="relu", help="activation name, or a comma list with one per layer")
    t.add_argument("--opt", type=_methods, default=("eb",), help="eb | ib | exact-isgd (comma list allowed)")
    t.add_argument("--lr", type=_floats, required=True, help="comma-separated, strictly increasing")
    t.add_argument("--seeds", type=_ints, default=(0,))
    t.add_argument("--epochs", type=int, default=1)
    t.add_argument("--batch", type=int, default=100)
    t.add_argument("--mu", type=float, default=0.0)
    t.add_argument("--clip", type=_clip, default=None)
    t.add_argument("--restart", choices=("on", "off"), default="off")
    t.add_argument("--subset", type=int, default=None, help="use only the first N training examples")
    t.add_argument("--out", default=None, help="CSV output path")
    t.add_argument("--report", action="store_true", help="print a summary after training")
    t.add_argument("--data-dir", default=None, help="write <method>.dat files for plotting")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = bench.ExperimentConfig(
        dataset=args.dataset, arch=args.arch, act=args.act, methods=args.opt, lrs=args.lr,
        seeds=args.seeds, epochs=args.epochs, batch=args.batch, clip=args.clip, mu=args.mu,
        restart=args.restart == "on", subset=args.subset, out=args.out,
    )
    try:
        cfg.validate()
    except (bench.ExperimentError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        dataset = None if cfg.dataset == "toy-quadratic" else bench.load_dataset(cfg.dataset, cfg.subset)
    except bench.ExperimentError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        records = bench.run_experiment(cfg, dataset)
    except (bench.ExperimentError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.report or args.data_dir:
        arch = None if cfg.dataset == "toy-quadratic" else bench.parse_arch(cfg.arch, cfg.act)
        print(bench.emit_report(records, args.data_dir, arch))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
