"""Trajectories of EB and IB on the one-parameter quadratic, from theta = 1.

Prints |theta| every five steps and optionally writes the run CSV.
"""
import argparse

from implicit_bp import bench
from implicit_bp import optimizers as opt


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lrs", default="1.75,2.5,10,100")
    ap.add_argument("--steps", type=int, default=30)
    ap.add_argument("--out", default=None, help="also write the CSV produced by the harness")
    args = ap.parse_args()
    lrs = [float(v) for v in args.lrs.split(",")]
    print("method   lr      " + " ".join(f"t={t:<8d}" for t in range(0, args.steps + 1, 5)))
    for method in (opt.EB, opt.IB):
        for lr in lrs:
            theta, row = 1.0, []
            for t in range(args.steps + 1):
                if t % 5 == 0:
                    row.append(f"{abs(theta):<10.3g}")
                theta = opt.quadratic_toy_step(theta, lr, method)
            print(f"{method:<8s} {lr:<7g} " + " ".join(row))
    if args.out:
        cfg = bench.ExperimentConfig("toy-quadratic", methods=(opt.EB, opt.IB), lrs=tuple(sorted(lrs)), out=args.out)
        bench.run_experiment(cfg)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
