"""Dataset loading and synthetic generators."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import SeededRng

IMAGE_MAGIC = 0x00000803  # 2051
LABEL_MAGIC = 0x00000801  # 2049
MUSIC_DIM = 88

LABELED = "labeled"
AUTOENCODE = "autoencode"
SEQUENCES = "sequences"
QUADRATIC = "quadratic"


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class Dataset:
    """Train/test data of one of three kinds.

    ``labeled``: ``(features, labels)`` arrays.  ``autoencode``: features
    only (targets are the inputs).  ``sequences``: lists of (T, dim) 0/1
    arrays.  ``quadratic`` is the dataless one-parameter toy.
    """

    kind: str
    train: object
    test: object = None
    dim: int | None = None
    num_classes: int | None = None

    def training_pairs(self, split: str = "train"):
        """Data in the form the network code consumes."""
        part = self.train if split == "train" else self.test
        if part is None:
            return None
        if self.kind == LABELED:
            return part
        if self.kind == AUTOENCODE:
            return (part, part)
        if self.kind == SEQUENCES:
            return [(seq[:-1], seq[1:]) for seq in part if len(seq) > 1]
        raise DataError(f"dataset kind {self.kind!r} has no training pairs")


# ---------------------------------------------------------------------------
# MNIST IDX


def _read_idx(path, magic_expected, ndim):
    raw = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated header: expected at least {header} bytes, got {len(raw)}")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != magic_expected:
        raise DataError(f"{path}: bad magic number 0x{magic:08x}, expected 0x{magic_expected:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + int(np.prod(dims))
    if len(raw) < expected:
        raise DataError(f"{path}: truncated file: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header, count=int(np.prod(dims)))
    return data.reshape(dims)


def load_mnist_idx(images_path, labels_path, test_paths=None) -> Dataset:
    """Load IDX image/label files; pixels scaled to [0, 1]."""
    def pair(ip, lp):
        images = _read_idx(ip, IMAGE_MAGIC, 3)
        labels = _read_idx(lp, LABEL_MAGIC, 1)
        if images.shape[0] != labels.shape[0]:
            raise DataError(f"image count {images.shape[0]} != label count {labels.shape[0]}")
        x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
        return x, labels.astype(np.int64)

    train = pair(images_path, labels_path)
    test = pair(*test_paths) if test_paths else None
    return Dataset(LABELED, train, test, dim=train[0].shape[1], num_classes=10)


def write_mnist_idx(images, labels, images_path, labels_path) -> None:
    """Write uint8 images (n, rows, cols) and labels (n,) as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def digits_mnist_standin(n: int = 2000, seed: int = 0):
    """MNIST-shaped stand-in built from scikit-learn's bundled 8x8 digits.

    Each 8x8 digit is upsampled (bilinear) to 20x20, placed in a 28x28
    frame with a random shift of up to 2 pixels, and quantised to uint8.
    Returns ``(images (n, 28, 28) uint8, labels (n,) uint8)``.  Used when
    the real MNIST IDX files are unavailable.
    """
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    digits = load_digits()
    base = digits.images / 16.0
    rng = SeededRng(seed)
    idx = rng.integers(0, len(base), size=n)
    shifts = rng.integers(-2, 3, size=(n, 2))
    big = np.stack([zoom(img, 2.5, order=1) for img in base])
    big = np.clip(big, 0.0, 1.0)
    out = np.zeros((n, 28, 28), dtype=np.uint8)
    for i, (j, (dy, dx)) in enumerate(zip(idx, shifts)):
        r0, c0 = 4 + dy, 4 + dx
        out[i, r0 : r0 + 20, c0 : c0 + 20] = np.round(big[j] * 255).astype(np.uint8)
    return out, digits.target[idx].astype(np.uint8)


# ---------------------------------------------------------------------------
# sequences (JSON)


def _decode_piece(piece, dim, where):
    seq = np.zeros((len(piece), dim))
    for t, chord in enumerate(piece):
        for note in chord:
            if not isinstance(note, int) or not 0 <= note < dim:
                raise DataError(f"{where}: note index {note!r} outside [0, {dim})")
            seq[t, note] = 1.0
    return seq


def load_sequences_json(path) -> Dataset:
    """Load ``{"dim": D, "train": [...], "test": [...]}``.

    Each piece is a list of chords; each chord is a list of active note
    indices.  Chords become D-dim 0/1 vectors.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON: {exc}") from exc
    if not isinstance(doc, dict) or "dim" not in doc or "train" not in doc:
        raise DataError(f"{path}: expected an object with 'dim' and 'train'")
    dim = int(doc["dim"])
    train = [_decode_piece(p, dim, f"{path} train[{i}]") for i, p in enumerate(doc["train"])]
    test = [_decode_piece(p, dim, f"{path} test[{i}]") for i, p in enumerate(doc.get("test", []))]
    return Dataset(SEQUENCES, train, test, dim=dim)


def _encode_piece(seq):
    return [[int(i) for i in np.flatnonzero(frame)] for frame in np.asarray(seq)]


def save_sequences_json(ds: Dataset, path) -> None:
    doc = {
        "dim": ds.dim,
        "train": [_encode_piece(s) for s in ds.train],
        "test": [_encode_piece(s) for s in (ds.test or [])],
    }
    Path(path).write_text(json.dumps(doc))


# ---------------------------------------------------------------------------
# CSV


def load_csv(path, header: bool = False, test_fraction: float = 0.0, seed: int = 0) -> Dataset:
    """Numeric columns; the last column is an integer class label."""
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    x = arr[:, :-1]
    y_raw = arr[:, -1]
    if not np.all(y_raw == np.round(y_raw)) or np.any(y_raw < 0):
        raise DataError(f"{path}: last column must hold non-negative integer labels")
    y = y_raw.astype(np.int64)
    train, test = (x, y), None
    if test_fraction > 0:
        perm = SeededRng(seed).permutation(len(x))
        cut = int(round(len(x) * (1.0 - test_fraction)))
        train = (x[perm[:cut]], y[perm[:cut]])
        test = (x[perm[cut:]], y[perm[cut:]])
    return Dataset(LABELED, train, test, dim=x.shape[1], num_classes=int(y.max()) + 1)


# ---------------------------------------------------------------------------
# synthetic


def synth_quadratic() -> Dataset:
    """The dataless one-parameter toy with loss ``theta^2 / 2``."""
    return Dataset(QUADRATIC, None, None, dim=1)


def quadratic_loss(theta: float) -> float:
    return 0.5 * theta * theta


def synth_blobs(n: int, d: int, classes: int, seed: int, separation: float = 6.0,
                test_fraction: float = 0.0) -> Dataset:
    """Gaussian clusters with unit spread around random class means.

    Class means are scaled so every pair is at least ``separation``
    standard deviations apart.
    """
    if n <= 0 or d <= 0 or classes <= 0:
        raise DataError(f"n, d and classes must be positive, got {n}, {d}, {classes}")
    rng = SeededRng(seed)
    means = rng.normal(size=(classes, d))
    if classes > 1:
        gaps = [np.linalg.norm(means[i] - means[j]) for i in range(classes) for j in range(i + 1, classes)]
        means *= separation / max(min(gaps), 1e-12)
    y = rng.integers(0, classes, size=n)
    x = means[y] + rng.normal(size=(n, d))
    train, test = (x, y), None
    if test_fraction > 0:
        cut = int(round(n * (1.0 - test_fraction)))
        train, test = (x[:cut], y[:cut]), (x[cut:], y[cut:])
    return Dataset(LABELED, train, test, dim=d, num_classes=classes)


def synth_chorales(n_pieces: int = 20, dim: int = MUSIC_DIM, seed: int = 0, min_len: int = 20,
                   max_len: int = 40, test_fraction: float = 0.2) -> Dataset:
    """Synthetic polyphonic pieces.

    A root note walks a small random-step chain inside a 3-octave window;
    each chord adds a major or minor triad on the root plus an occasional
    bass note an octave down.  Pieces are split train/test at random.
    """
    rng = SeededRng(seed)
    lo, hi = 36, 72
    pieces = []
    for _ in range(n_pieces):
        T = int(rng.integers(min_len, max_len + 1))
        root = int(rng.integers(lo, hi))
        seq = np.zeros((T, dim))
        for t in range(T):
            step = int(rng.integers(-1, 2)) * int(rng.integers(1, 6))
            root = min(max(root + step, lo), hi)
            third = 4 if rng.uniform() < 0.6 else 3
            for note in (root, root + third, root + 7):
                seq[t, note % dim] = 1.0
            if rng.uniform() < 0.3:
                seq[t, (root - 12) % dim] = 1.0
        pieces.append(seq)
    perm = rng.permutation(n_pieces)
    n_test = int(round(n_pieces * test_fraction))
    test = [pieces[i] for i in perm[:n_test]]
    train = [pieces[i] for i in perm[n_test:]]
    return Dataset(SEQUENCES, train, test, dim=dim)
