"""Element-wise activation functions.

Each activation exposes its value and derivative (vectorised over numpy
arrays) and, where exact, a piecewise-cubic representation used by the
implicit solvers.  Piece intervals are half-open ``[lower, upper)``, so at a
kink the right-hand piece owns the point and the derivative there is the
right-hand derivative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

RELU = "relu"
ARCTAN = "arctan"
HARDTANH = "hardtanh"
SMOOTHSTEP = "smoothstep"
PIECEWISE_CUBIC = "piecewise-cubic"

_CONTINUITY_TOL = 1e-12


class DomainError(ValueError):
    """Raised for non-finite activation inputs."""


class UnsupportedRepresentation(ValueError):
    """Raised when an activation has no exact piecewise-cubic form."""


@dataclass(frozen=True)
class CubicPiece:
    """``a3*x**3 + a2*x**2 + a1*x + a0`` on ``[lower, upper)``."""

    lower: float
    upper: float
    coeffs: tuple[float, float, float, float]

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"piece bounds must satisfy lower < upper, got [{self.lower}, {self.upper})")
        if len(self.coeffs) != 4:
            raise ValueError("coeffs must be (a3, a2, a1, a0)")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    def value(self, x):
        a3, a2, a1, a0 = self.coeffs
        return ((a3 * x + a2) * x + a1) * x + a0

    def slope(self, x):
        a3, a2, a1, _ = self.coeffs
        return (3.0 * a3 * x + 2.0 * a2) * x + a1

    @property
    def degree(self) -> int:
        for d, c in zip((3, 2, 1), self.coeffs):
            if c != 0.0:
                return d
        return 0


def _check_partition(pieces: tuple[CubicPiece, ...]) -> None:
    if not pieces:
        raise ValueError("a piecewise-cubic activation needs at least one piece")
    if pieces[0].lower != -math.inf or pieces[-1].upper != math.inf:
        raise ValueError("pieces must cover the real line: first lower = -inf, last upper = +inf")
    for left, right in zip(pieces, pieces[1:]):
        if left.upper != right.lower:
            raise ValueError(f"pieces are not contiguous at {left.upper} / {right.lower}")
        x = left.upper
        lv, rv = left.value(x), right.value(x)
        if abs(lv - rv) > _CONTINUITY_TOL * max(1.0, abs(lv), abs(rv)):
            raise ValueError(f"activation is discontinuous at x={x}: {lv} vs {rv}")


@dataclass(frozen=True)
class Activation:
    kind: str
    pieces_: tuple[CubicPiece, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in (RELU, ARCTAN, HARDTANH, SMOOTHSTEP, PIECEWISE_CUBIC):
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == PIECEWISE_CUBIC:
            pieces = tuple(self.pieces_ or ())
            _check_partition(pieces)
            object.__setattr__(self, "pieces_", pieces)
            lowers = np.array([p.lower for p in pieces])
            coeffs = np.array([p.coeffs for p in pieces])
            object.__setattr__(self, "_lowers", lowers)
            object.__setattr__(self, "_coeffs", coeffs)

    @property
    def name(self) -> str:
        if self.kind == PIECEWISE_CUBIC and self.pieces_ == _IDENTITY_PIECES:
            return "identity"
        return self.kind

    # Unchecked, vectorised evaluation used on the hot path.
    def value(self, x):
        x = np.asarray(x, dtype=np.float64)
        k = self.kind
        if k == RELU:
            return np.maximum(x, 0.0)
        if k == ARCTAN:
            return np.arctan(x)
        if k == HARDTANH:
            return np.clip(x, -1.0, 1.0)
        if k == SMOOTHSTEP:
            xc = np.clip(x, -1.0, 1.0)
            return xc * (1.5 - 0.5 * xc * xc)
        a3, a2, a1, a0 = self._piece_coeffs(x)
        return ((a3 * x + a2) * x + a1) * x + a0

    def slope(self, x):
        x = np.asarray(x, dtype=np.float64)
        k = self.kind
        if k == RELU:
            return (x >= 0.0).astype(np.float64)
        if k == ARCTAN:
            return 1.0 / (1.0 + x * x)
        if k == HARDTANH:
            return ((x >= -1.0) & (x < 1.0)).astype(np.float64)
        if k == SMOOTHSTEP:
            inside = (x >= -1.0) & (x < 1.0)
            return np.where(inside, 1.5 * (1.0 - x * x), 0.0)
        a3, a2, a1, _ = self._piece_coeffs(x)
        return (3.0 * a3 * x + 2.0 * a2) * x + a1

    def _piece_coeffs(self, x):
        idx = np.searchsorted(self._lowers, x, side="right") - 1
        idx = np.clip(idx, 0, len(self._lowers) - 1)
        c = self._coeffs[idx]
        return c[..., 0], c[..., 1], c[..., 2], c[..., 3]

    def to_pieces(self) -> tuple[CubicPiece, ...]:
        if self.kind == ARCTAN:
            raise UnsupportedRepresentation("arctan has no exact piecewise-cubic form")
        if self.kind == PIECEWISE_CUBIC:
            return self.pieces_
        return _BUILTIN_PIECES[self.kind]

    def max_abs_slope(self) -> float:
        """Supremum of ``|sigma'|`` over the real line (inf if unbounded)."""
        if self.kind in (RELU, ARCTAN, HARDTANH):
            return 1.0
        if self.kind == SMOOTHSTEP:
            return 1.5
        best = 0.0
        for p in self.pieces_:
            a3, a2, a1, _ = p.coeffs
            lo, hi = p.lower, p.upper
            if (a3 != 0.0 or a2 != 0.0) and (math.isinf(lo) or math.isinf(hi)):
                return math.inf
            cands = [x for x in (lo, hi) if math.isfinite(x)]
            if a3 != 0.0:
                xv = -a2 / (3.0 * a3)
                if lo <= xv <= hi:
                    cands.append(xv)
            if not cands:
                best = max(best, abs(a1))
            else:
                best = max(best, max(abs(p.slope(x)) for x in cands))
        return best

    def __call__(self, x):
        return evaluate(self, x)


def _check_finite(x):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"activation input must be finite, got {x!r}")
    return arr


def _unwrap(x, out):
    return float(out) if np.ndim(x) == 0 else out


def evaluate(act: Activation, x):
    return _unwrap(x, act.value(_check_finite(x)))


def derivative(act: Activation, x):
    return _unwrap(x, act.slope(_check_finite(x)))


def pieces(act: Activation) -> tuple[CubicPiece, ...]:
    return act.to_pieces()


_INF = math.inf
_BUILTIN_PIECES = {
    RELU: (
        CubicPiece(-_INF, 0.0, (0.0, 0.0, 0.0, 0.0)),
        CubicPiece(0.0, _INF, (0.0, 0.0, 1.0, 0.0)),
    ),
    HARDTANH: (
        CubicPiece(-_INF, -1.0, (0.0, 0.0, 0.0, -1.0)),
        CubicPiece(-1.0, 1.0, (0.0, 0.0, 1.0, 0.0)),
        CubicPiece(1.0, _INF, (0.0, 0.0, 0.0, 1.0)),
    ),
    SMOOTHSTEP: (
        CubicPiece(-_INF, -1.0, (0.0, 0.0, 0.0, -1.0)),
        CubicPiece(-1.0, 1.0, (-0.5, 0.0, 1.5, 0.0)),
        CubicPiece(1.0, _INF, (0.0, 0.0, 0.0, 1.0)),
    ),
}
_IDENTITY_PIECES = (CubicPiece(-_INF, _INF, (0.0, 0.0, 1.0, 0.0)),)

relu = Activation(RELU)
arctan = Activation(ARCTAN)
hardtanh = Activation(HARDTANH)
smoothstep = Activation(SMOOTHSTEP)
identity = Activation(PIECEWISE_CUBIC, _IDENTITY_PIECES)


def piecewise_cubic(pieces_) -> Activation:
    return Activation(PIECEWISE_CUBIC, tuple(pieces_))


def by_name(name: str) -> Activation:
    table = {
        "relu": relu,
        "arctan": arctan,
        "hardtanh": hardtanh,
        "smoothstep": smoothstep,
        "identity": identity,
        "linear": identity,
    }
    try:
        return table[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(table)}") from None


# Flop cost of one alpha solve, used by the run-time overhead bound.
FLOPS_PER_ALPHA = {RELU: 10, ARCTAN: 100, HARDTANH: 15, SMOOTHSTEP: 25}

deriv = derivative
