"""Learning-rate sweeps comparing EB, IB and exact ISGD.

One run is one (method, lr, seed) triple.  Runs with the same seed share the
initial parameters and the batch order, so methods differ only in the update.
"""
from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import activations as acts
from . import data as ds
from . import network as nw
from . import optimizers as opt
from .linalg import SeededRng

CSV_FIELDS = ("method", "lr", "seed", "epoch", "split", "loss", "accuracy", "diverged", "wall_ms")
TOY_STEPS = 30


class ExperimentError(ValueError):
    """Configuration problem detected before training."""


@dataclass(frozen=True)
class RunRecord:
    method: str
    lr: float
    seed: int
    epoch: int
    split: str
    loss: float
    accuracy: float | None
    diverged: bool
    wall_ms: float

    def row(self) -> dict:
        return {
            "method": self.method,
            "lr": repr(float(self.lr)),
            "seed": self.seed,
            "epoch": self.epoch,
            "split": self.split,
            "loss": repr(float(self.loss)),
            "accuracy": "" if self.accuracy is None else repr(float(self.accuracy)),
            "diverged": int(self.diverged),
            "wall_ms": f"{self.wall_ms:.3f}",
        }


@dataclass
class ExperimentConfig:
    dataset: str
    arch: str = "mlp:784,32,10"
    act: str = "relu"
    methods: tuple[str, ...] = (opt.EB, opt.IB)
    lrs: tuple[float, ...] = (0.1,)
    seeds: tuple[int, ...] = (0,)
    epochs: int = 1
    batch: int = 100
    clip: float | None = None
    mu: float = 0.0
    restart: bool = False
    subset: int | None = None
    out: str | None = None
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.seeds:
            raise ExperimentError("at least one seed is required")
        if not self.lrs or any(not (lr > 0 and math.isfinite(lr)) for lr in self.lrs):
            raise ExperimentError(f"learning rates must be positive and finite: {self.lrs}")
        if any(b <= a for a, b in zip(self.lrs, self.lrs[1:])):
            raise ExperimentError(f"lr grid must be strictly increasing: {self.lrs}")
        if self.epochs < 1 or self.batch < 1:
            raise ExperimentError("epochs and batch must be positive")
        for m in self.methods:
            if m not in opt.METHODS:
                raise ExperimentError(f"unknown method {m!r}")
        for lr in self.lrs:
            # OptimizerConfig does the remaining field checks.
            try:
                opt.OptimizerConfig(self.methods[0], lr, self.mu, self.clip, self.restart, self.batch)
            except opt.ConfigError as exc:
                raise ExperimentError(str(exc)) from exc
        if self.dataset != "toy-quadratic":
            parse_arch(self.arch, self.act)


# ---------------------------------------------------------------------------
# architecture strings


@dataclass(frozen=True)
class Arch:
    kind: str  # "mlp", "ae" or "rnn"
    dims: tuple[int, ...]
    activations: tuple[acts.Activation, ...]


def parse_arch(text: str, act: str = "relu") -> Arch:
    """Parse ``mlp:784,32,10``, ``ae:784,100,784`` or ``rnn:88,32,88``.

    ``act`` is one activation name or a comma list with one name per layer
    (for ``rnn`` the list is cell then output; a single name sets the cell
    and the output layer is linear).
    """
    try:
        kind, rest = text.split(":", 1)
        dims = tuple(int(v) for v in rest.split(","))
    except ValueError:
        raise ExperimentError(f"bad architecture string {text!r}; expected e.g. mlp:784,32,10") from None
    if kind not in ("mlp", "ae", "rnn") or len(dims) < 2 or min(dims) < 1:
        raise ExperimentError(f"bad architecture string {text!r}")
    if kind == "rnn" and len(dims) != 3:
        raise ExperimentError("rnn architecture needs exactly input,hidden,output widths")
    names = [a.strip() for a in act.split(",")] if isinstance(act, str) else list(act)
    n_layers = 2 if kind == "rnn" else len(dims) - 1
    if kind == "rnn" and len(names) == 1:
        names = names + ["identity"]
    if len(names) == 1:
        names = names * n_layers
    if len(names) != n_layers:
        raise ExperimentError(f"{len(names)} activations given for {n_layers} layers")
    try:
        plan = tuple(acts.by_name(n) for n in names)
    except ValueError as exc:
        raise ExperimentError(str(exc)) from exc
    return Arch(kind, dims, plan)


def build_network(arch: Arch, rng: SeededRng) -> nw.Network:
    if arch.kind == "rnn":
        n_in, hidden, n_out = arch.dims
        return nw.init_rnn(n_in, hidden, n_out, rng, arch.activations[0], arch.activations[1])
    loss = nw.Loss.MSE if arch.kind == "ae" else nw.Loss.SOFTMAX_CE
    return nw.init_params(arch.dims, arch.activations, rng, loss)


# ---------------------------------------------------------------------------
# datasets


def _mnist_dir() -> Path:
    return Path(os.environ.get("MNIST_DIR", "data/mnist"))


def mnist_available(directory=None) -> bool:
    d = Path(directory) if directory else _mnist_dir()
    return (d / "train-images-idx3-ubyte").exists() and (d / "train-labels-idx1-ubyte").exists()


def load_dataset(ref: str, subset: int | None = None, seed: int = 0) -> ds.Dataset:
    """Resolve a dataset reference.

    ``mnist`` reads IDX files from ``$MNIST_DIR`` (default ``data/mnist``);
    ``mnist-standin`` builds the digits-based stand-in; ``json:PATH``,
    ``csv:PATH``; ``blobs``; ``chorales`` (synthetic sequences);
    ``toy-quadratic``.
    """
    if ref == "toy-quadratic":
        return ds.synth_quadratic()
    if ref == "blobs":
        dset = ds.synth_blobs(subset or 500, 2, 3, seed=seed, test_fraction=0.2)
    elif ref == "chorales":
        dset = ds.synth_chorales(subset or 20, seed=seed)
    elif ref == "mnist":
        d = _mnist_dir()
        test = (d / "t10k-images-idx3-ubyte", d / "t10k-labels-idx1-ubyte")
        dset = ds.load_mnist_idx(d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte",
                                 test if test[0].exists() else None)
    elif ref == "mnist-standin":
        images, labels = ds.digits_mnist_standin(n=subset or 2000, seed=seed)
        x = images.reshape(len(images), -1) / 255.0
        dset = ds.Dataset(ds.LABELED, (x, labels.astype(np.int64)), None, dim=784, num_classes=10)
    elif ref.startswith("json:"):
        dset = ds.load_sequences_json(ref[5:])
    elif ref.startswith("csv:"):
        dset = ds.load_csv(ref[4:])
    else:
        raise ExperimentError(f"unknown dataset reference {ref!r}")
    if subset and dset.kind == ds.LABELED and subset < len(dset.train[0]):
        x, y = dset.train
        dset = ds.Dataset(dset.kind, (x[:subset], y[:subset]), dset.test, dset.dim, dset.num_classes)
    return dset


# ---------------------------------------------------------------------------
# training


def _batches(pairs, batch: int, rng: SeededRng, is_rnn: bool):
    if is_rnn:
        order = rng.permutation(len(pairs))
        for i in range(0, len(order), batch):
            yield [pairs[j] for j in order[i : i + batch]]
        return
    x, y = pairs
    order = rng.permutation(len(x))
    for i in range(0, len(order), batch):
        idx = order[i : i + batch]
        yield x[idx], y[idx]


def _finite(net: nw.Network) -> bool:
    return all(np.all(np.isfinite(t)) for t in net.thetas())


def train_run(net: nw.Network, dataset: ds.Dataset, cfg: opt.OptimizerConfig, epochs: int, seed: int,
              eval_test: bool = True) -> list[RunRecord]:
    """Train one model and record per-epoch train (and test) loss."""
    is_rnn = net.kind == nw.RNN
    train_pairs = dataset.training_pairs("train")
    test_pairs = dataset.training_pairs("test") if eval_test else None
    if is_rnn and test_pairs is not None and not test_pairs:
        test_pairs = None
    state = opt.prepare_state(net, train_pairs, cfg)
    order_rng = SeededRng(seed).spawn(1)
    records = []
    diverged = False
    for epoch in range(1, epochs + 1):
        wall = 0.0
        if not diverged:
            for batch in _batches(train_pairs, cfg.batch_size, order_rng, is_rnn):
                t0 = time.perf_counter()
                state = opt.step(state, batch, cfg)
                wall += time.perf_counter() - t0
                if not _finite(state.net):
                    diverged = True
                    break
        for split, pairs in (("train", train_pairs), ("test", test_pairs)):
            if pairs is None:
                continue
            if diverged:
                loss, acc = math.nan, None
            else:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss = nw.dataset_loss(state.net, pairs)
                    acc = nw.accuracy(state.net, pairs)
            bad = diverged or not math.isfinite(loss)
            records.append(RunRecord(cfg.method, cfg.eta, seed, epoch, split, loss, acc, bad, wall * 1000.0))
    return records


def _toy_records(cfg: ExperimentConfig) -> list[RunRecord]:
    records = []
    for method in cfg.methods:
        for lr in cfg.lrs:
            for seed in cfg.seeds:
                theta = 1.0
                records.append(RunRecord(method, lr, seed, 0, "train", ds.quadratic_loss(theta), None, False, 0.0))
                for t in range(1, TOY_STEPS + 1):
                    t0 = time.perf_counter()
                    theta = opt.quadratic_toy_step(theta, lr, method)
                    wall = (time.perf_counter() - t0) * 1000.0
                    loss = ds.quadratic_loss(theta)
                    records.append(RunRecord(method, lr, seed, t, "train", loss, None, not math.isfinite(loss), wall))
    return records


def run_experiment(cfg: ExperimentConfig, dataset: ds.Dataset | None = None) -> list[RunRecord]:
    """Run every (method, lr, seed) and optionally write the CSV."""
    cfg.validate()
    if cfg.dataset == "toy-quadratic":
        records = _toy_records(cfg)
    else:
        arch = parse_arch(cfg.arch, cfg.act)
        if dataset is None:
            dataset = load_dataset(cfg.dataset, cfg.subset)
        _check_compat(arch, dataset)
        records = []
        for method in cfg.methods:
            for lr in cfg.lrs:
                ocfg = opt.OptimizerConfig(method, lr, cfg.mu, cfg.clip, cfg.restart, cfg.batch,
                                           **cfg.extra)
                for seed in cfg.seeds:
                    net = build_network(arch, SeededRng(seed))
                    records.extend(train_run(net, dataset, ocfg, cfg.epochs, seed))
    records = sort_records(records)
    if cfg.out:
        write_csv(records, cfg.out)
    return records


def _check_compat(arch: Arch, dataset: ds.Dataset) -> None:
    if arch.kind == "rnn":
        if dataset.kind != ds.SEQUENCES:
            raise ExperimentError("rnn architectures need a sequence dataset")
        if arch.dims[0] != dataset.dim or arch.dims[2] != dataset.dim:
            raise ExperimentError(f"rnn widths {arch.dims} do not match sequence dim {dataset.dim}")
        return
    if dataset.kind != ds.LABELED:
        raise ExperimentError(f"{arch.kind} architectures need a labeled dataset")
    if arch.dims[0] != dataset.dim:
        raise ExperimentError(f"input width {arch.dims[0]} does not match data dim {dataset.dim}")
    if arch.kind == "mlp" and arch.dims[-1] < (dataset.num_classes or 0):
        raise ExperimentError(f"output width {arch.dims[-1]} < number of classes {dataset.num_classes}")
    if arch.kind == "ae" and arch.dims[-1] != dataset.dim:
        raise ExperimentError("autoencoder output width must equal the input width")


def as_autoencode(dataset: ds.Dataset) -> ds.Dataset:
    return ds.Dataset(ds.AUTOENCODE, dataset.train[0], None if dataset.test is None else dataset.test[0],
                      dataset.dim)


def sort_records(records):
    return sorted(records, key=lambda r: (r.method, r.lr, r.seed, r.epoch, r.split))


def write_csv(records, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in sort_records(records):
            w.writerow(r.row())


def read_csv(path) -> list[RunRecord]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(RunRecord(row["method"], float(row["lr"]), int(row["seed"]), int(row["epoch"]),
                                 row["split"], float(row["loss"]),
                                 float(row["accuracy"]) if row["accuracy"] else None,
                                 bool(int(row["diverged"])), float(row["wall_ms"])))
    return out


# ---------------------------------------------------------------------------
# analysis


def mean_losses(records, split: str = "train", epoch: int | None = None) -> dict:
    """``{method: {lr: (mean, std, n)}}`` over seeds at one epoch.

    Defaults to each method's last recorded epoch.  A diverged seed makes
    the mean infinite.  ``std`` uses the sample (n - 1) convention and is 0
    for a single seed.
    """
    rows = [r for r in records if r.split == split]
    out = {}
    for method in sorted({r.method for r in rows}):
        mine = [r for r in rows if r.method == method]
        ep = epoch if epoch is not None else max(r.epoch for r in mine)
        table = {}
        for lr in sorted({r.lr for r in mine}):
            vals = [r.loss if not r.diverged else math.inf for r in mine if r.lr == lr and r.epoch == ep]
            if not vals:
                continue
            arr = np.array(vals)
            if np.all(np.isfinite(arr)):
                mean = float(arr.mean())
                std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
            else:
                mean, std = math.inf, math.nan
            table[lr] = (mean, std, len(arr))
        out[method] = table
    return out


def divergence_value(eb_means: dict) -> float:
    """Midpoint of EB's smallest and largest finite mean losses."""
    finite = [m for m in eb_means.values() if math.isfinite(m)]
    if not finite:
        raise ExperimentError("EB has no finite mean loss on this grid")
    return 0.5 * (min(finite) + max(finite))


def divergence_threshold(records, baseline_stats=None, split: str = "train", epoch: int | None = None,
                         baseline: str = opt.EB) -> dict:
    """Learning rate at which each method starts to diverge.

    The cut-off loss is the midpoint of the baseline's (EB's) minimum and
    maximum mean losses over the grid, or ``(min + max) / 2`` from
    ``baseline_stats = (min, max)``.  A method's threshold is the smallest
    grid lr at or above EB's best lr whose mean loss exceeds the cut-off or
    is non-finite; ``inf`` if none does.
    """
    means = mean_losses(records, split, epoch)
    if baseline not in means:
        raise ExperimentError(f"records contain no {baseline} runs")
    eb = {lr: v[0] for lr, v in means[baseline].items()}
    if len(eb) < 2:
        raise ExperimentError("need at least two learning rates to locate a divergence threshold")
    if baseline_stats is not None:
        lo, hi = baseline_stats
        cut = 0.5 * (lo + hi)
    else:
        cut = divergence_value(eb)
    finite_eb = {lr: m for lr, m in eb.items() if math.isfinite(m)}
    start = min(finite_eb, key=lambda lr: (finite_eb[lr], lr))
    out = {}
    for method, table in means.items():
        if set(table) != set(eb):
            raise ExperimentError(f"{method} does not cover the same lr grid as {baseline}")
        out[method] = math.inf
        for lr in sorted(table):
            if lr < start:
                continue
            m = table[lr][0]
            if not math.isfinite(m) or m > cut:
                out[method] = lr
                break
    return out


def overhead_bound(n: int, m: int, c_sigma) -> float:
    """Upper bound ``(2n + c m) / (3 n m)`` on IB's relative extra run time."""
    if n <= 0 or m <= 0:
        raise ExperimentError(f"layer sizes must be positive, got n={n}, m={m}")
    return float(Fraction(2 * n) / (3 * n * m) + Fraction(c_sigma) * m / (3 * n * m))


def network_overhead_bound(arch: Arch) -> float:
    """Layer bounds combined: total extra flops over total shared flops."""
    extra = Fraction(0)
    base = Fraction(0)
    if arch.kind == "rnn":
        n_in, hidden, n_out = arch.dims
        shapes = [(n_in + hidden, hidden), (hidden, n_out)]
    else:
        shapes = list(zip(arch.dims[:-1], arch.dims[1:]))
    for (n, m), act in zip(shapes, arch.activations):
        c = acts.FLOPS_PER_ALPHA.get(act.kind, 10)
        extra += 2 * n + Fraction(c) * m
        base += 3 * n * m
    return float(extra / base)


def wall_ratio(records, num: str = opt.IB, den: str = opt.EB) -> float:
    """Total step-loop wall time of ``num`` runs over ``den`` runs."""
    a = sum(r.wall_ms for r in records if r.method == num and r.split == "train")
    b = sum(r.wall_ms for r in records if r.method == den and r.split == "train")
    return a / b if b > 0 else math.nan


def emit_report(records, data_dir=None, arch: Arch | None = None) -> str:
    """Plain-text summary; optionally one ``<method>.dat`` file per method.

    Data files hold ``lr mean std`` columns, readable by gnuplot.
    """
    records = list(records)
    if not records:
        raise ExperimentError("no records to report")
    lines = []
    means = mean_losses(records)
    for method, table in means.items():
        lines.append(f"[{method}]")
        for lr, (mean, std, n) in table.items():
            lines.append(f"  lr={lr:<10g} mean={mean:.6g} std={std:.6g} seeds={n}")
    if opt.EB in means and len(means[opt.EB]) > 1:
        try:
            thr = divergence_threshold(records)
            lines.append("divergence thresholds: " + ", ".join(f"{m}={v:g}" for m, v in thr.items()))
            if opt.IB in thr and math.isfinite(thr[opt.EB]) and thr[opt.EB] > 0:
                lines.append(f"IB/EB threshold ratio: {thr[opt.IB] / thr[opt.EB]:.3f}")
        except ExperimentError as exc:
            lines.append(f"divergence thresholds unavailable: {exc}")
    if any(r.method == opt.IB for r in records) and any(r.method == opt.EB for r in records):
        ratio = wall_ratio(records)
        lines.append(f"wall-time ratio IB/EB: {ratio:.3f}")
        if arch is not None:
            lines.append(f"flop bound on IB overhead: {network_overhead_bound(arch):.4%}")
    if data_dir is not None:
        Path(data_dir).mkdir(parents=True, exist_ok=True)
        for method, table in means.items():
            with open(Path(data_dir) / f"{method}.dat", "w") as f:
                f.write("# lr mean std\n")
                for lr, (mean, std, _) in table.items():
                    f.write(f"{lr!r} {mean!r} {std!r}\n")
    return "\n".join(lines)
