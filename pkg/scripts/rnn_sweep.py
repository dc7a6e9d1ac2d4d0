"""Learning-rate sweep of a next-frame RNN on polyphonic sequences.

Compares EB, IB and EB with gradient clipping.  ``--dataset`` accepts
``chorales`` (synthetic) or ``json:PATH`` from ``convert_music.py``.
"""
import argparse
import math

import numpy as np

from implicit_bp import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dataset", default="chorales")
    ap.add_argument("--pieces", type=int, default=20, help="piece count for the synthetic set")
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--lr-min", type=float, default=0.1)
    ap.add_argument("--lr-max", type=float, default=100.0)
    ap.add_argument("--points", type=int, default=7)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--clip", type=float, default=1.0)
    ap.add_argument("--out-prefix", default="rnn_sweep")
    args = ap.parse_args()

    dataset = bench.load_dataset(args.dataset, args.pieces if args.dataset == "chorales" else None)
    dim = dataset.dim
    grid = tuple(float(v) for v in np.geomspace(args.lr_min, args.lr_max, args.points))
    means = {}
    for label, method, clip in (("eb", "eb", None), ("ib", "ib", None), ("eb-clip", "eb", args.clip)):
        out = f"{args.out_prefix}_{label}.csv"
        cfg = bench.ExperimentConfig(args.dataset, f"rnn:{dim},{args.hidden},{dim}", "arctan", (method,), grid,
                                     tuple(range(args.seeds)), args.epochs, 1, clip=clip, out=out)
        records = bench.run_experiment(cfg, dataset)
        means[label] = {lr: v[0] for lr, v in bench.mean_losses(records)[method].items()}
        print(f"wrote {out}")
    print(f"{'lr':>10s} {'eb':>12s} {'ib':>12s} {'eb-clip':>12s}")
    for lr in grid:
        print(f"{lr:>10.4g} " + " ".join(f"{means[k][lr]:>12.6f}" for k in ("eb", "ib", "eb-clip")))
    finite = [lr for lr in grid if all(math.isfinite(means[k][lr]) for k in means)]
    wins = sum(means["ib"][lr] <= means["eb-clip"][lr] for lr in finite)
    print(f"IB at or below clipped EB at {wins}/{len(finite)} learning rates")


if __name__ == "__main__":
    main()
