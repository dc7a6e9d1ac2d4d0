"""Learning-rate sweep of EB, IB and exact ISGD on an MNIST-sized MLP.

Uses real MNIST IDX files when ``$MNIST_DIR`` (or ``data/mnist``) holds
them, otherwise the digits-based stand-in.  Writes one CSV and prints the
divergence thresholds, wall-time ratio and flop bound.
"""
import argparse

import numpy as np

from implicit_bp import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--lr-min", type=float, default=0.005)
    ap.add_argument("--lr-max", type=float, default=5.0)
    ap.add_argument("--points", type=int, default=8)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=1)
    ap.add_argument("--methods", default="eb,ib,exact-isgd")
    ap.add_argument("--out", default="mlp_sweep.csv")
    ap.add_argument("--data-dir", default=None)
    args = ap.parse_args()

    ref = "mnist" if bench.mnist_available() else "mnist-standin"
    grid = tuple(float(v) for v in np.geomspace(args.lr_min, args.lr_max, args.points))
    cfg = bench.ExperimentConfig(ref, "mlp:784,32,10", "arctan,relu", tuple(args.methods.split(",")), grid,
                                 tuple(range(args.seeds)), args.epochs, 100, out=args.out)
    cfg.validate()
    records = bench.run_experiment(cfg, bench.load_dataset(ref, args.samples))
    print(f"dataset: {ref} ({args.samples} samples); wrote {args.out}")
    print(bench.emit_report(records, args.data_dir, bench.parse_arch(cfg.arch, cfg.act)))


if __name__ == "__main__":
    main()
