"""Dense vector/matrix helpers and the seeded random stream.

Vectors and matrices are plain float64 numpy arrays (row-major, so a weight
row is contiguous).  The helpers below only add shape checking with readable
error messages on top of numpy.
"""
from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_vector(v) -> np.ndarray:
    out = np.asarray(v, dtype=np.float64)
    if out.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {out.shape}")
    return out


def as_matrix(m) -> np.ndarray:
    out = np.asarray(m, dtype=np.float64)
    if out.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {out.shape}")
    return out


def matvec(m, v) -> np.ndarray:
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise DimensionError(
            f"matvec shape mismatch: matrix {m.shape[0]}x{m.shape[1]} vs vector of length {v.shape[0]}"
        )
    return m @ v


def dot(x, y) -> float:
    x = as_vector(x)
    y = as_vector(y)
    if x.shape != y.shape:
        raise DimensionError(f"dot length mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(x @ y)


def norm_sq(v) -> float:
    v = as_vector(v)
    return float(v @ v)


def axpy(a: float, x, y) -> np.ndarray:
    """Return ``a * x + y``."""
    x = as_vector(x)
    y = as_vector(y)
    if x.shape != y.shape:
        raise DimensionError(f"axpy length mismatch: {x.shape[0]} vs {y.shape[0]}")
    return a * x + y


class SeededRng:
    """Reproducible random stream built on numpy's PCG64 bit generator.

    PCG64 is a fixed, documented algorithm, so a given seed yields the same
    stream on every platform.  ``spawn`` derives independent child streams
    (used to give EB and IB identical initialisations per seed).
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def raw_bytes(self, n: int) -> bytes:
        return self._gen.bytes(n)

    def spawn(self, key: int) -> "SeededRng":
        return SeededRng(np.random.SeedSequence([self.seed, key]).generate_state(1, np.uint64)[0])
