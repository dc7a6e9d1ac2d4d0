"""Per-node implicit step solvers.

For one output node the implicit update reduces to a scalar problem in
``alpha``::

    J(alpha) = b * sigma(c - alpha * s) + s * kappa * alpha**2 / 2

with ``kappa = 1 + eta*mu``, ``c = theta.z / kappa`` and ``s = eta * |z|^2``.
The node's parameter row then moves to ``theta / kappa - eta * alpha * z``.

Every solver has an array core (``*_core``) that works element-wise on numpy
arrays of ``(b, c, s, kappa)`` and a scalar wrapper taking an
:class:`AlphaProblem`.  The training loop only uses the array cores.

At any stationary point ``kappa * alpha = b * sigma'(c - alpha*s)``; the
solvers recover alpha from that identity rather than from ``(c - x) / s``
because the latter cancels catastrophically at small learning rates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import activations as acts
from .activations import Activation, CubicPiece
from .linalg import DimensionError, as_vector

# Leading coefficient below which the arctan cubic is treated as degenerate.
CUBIC_DEGENERATE = 1e-30
_TIE_RTOL = 1e-12


class InvalidProblem(ValueError):
    pass


class DivergentLimit(ValueError):
    """The infinite-learning-rate problem has no finite minimiser."""


@dataclass(frozen=True)
class AlphaProblem:
    b: float
    theta_dot_z: float
    eta: float
    mu: float
    z_norm_sq: float

    def __post_init__(self):
        vals = (self.b, self.theta_dot_z, self.eta, self.mu, self.z_norm_sq)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidProblem(f"all fields must be finite: {self}")
        if self.eta <= 0:
            raise InvalidProblem(f"eta must be positive, got {self.eta}")
        if self.mu < 0:
            raise InvalidProblem(f"mu must be non-negative, got {self.mu}")
        if self.z_norm_sq < 0:
            raise InvalidProblem(f"z_norm_sq must be non-negative, got {self.z_norm_sq}")

    @property
    def kappa(self) -> float:
        return 1.0 + self.eta * self.mu

    @property
    def c(self) -> float:
        """Pre-activation after the ridge shrink, before the alpha move."""
        return self.theta_dot_z / self.kappa

    @property
    def s(self) -> float:
        return self.eta * self.z_norm_sq

    def arrays(self):
        return (np.array([self.b]), np.array([self.c]), np.array([self.s]), np.array([self.kappa]))


@dataclass(frozen=True)
class AlphaSolution:
    alpha: float
    objective: float
    branch: str


# ---------------------------------------------------------------------------
# objective


def objective_core(act: Activation, b, c, s, kappa, alpha):
    return b * act.value(c - alpha * s) + 0.5 * s * kappa * alpha * alpha


def objective(p: AlphaProblem, act: Activation, alpha: float) -> float:
    return float(objective_core(act, p.b, p.c, p.s, p.kappa, np.float64(alpha)))


def _sigma_change(act, c, d):
    """``sigma(c + d) - sigma(c)`` without cancellation for small ``d``."""
    x = c + d
    if act.kind == acts.ARCTAN:
        return np.arctan2(d, 1.0 + x * c)
    ps = act.to_pieces()
    lowers = np.array([p.lower for p in ps])
    coeffs = np.array([p.coeffs for p in ps])
    ix = np.searchsorted(lowers, x, side="right") - 1
    ic = np.searchsorted(lowers, c, side="right") - 1
    a3, a2, a1 = (coeffs[np.clip(ic, 0, len(ps) - 1), j] for j in range(3))
    same = d * (a3 * (x * x + x * c + c * c) + a2 * (x + c) + a1)
    return np.where(ix == ic, same, act.value(x) - act.value(c))


def _pick(act, b, c, s, kappa, cands, rule="global"):
    """Choose one candidate per row.

    ``cands`` has shape (n, k) with NaN marking absent candidates.  The
    ``global`` rule takes the lowest objective and breaks ties (relative
    1e-12 of the terms involved) toward the smallest ``|alpha|``;
    ``closest`` takes the smallest ``|alpha|`` outright.  Objectives are
    compared as changes from ``alpha = 0`` so tiny but real decreases are
    not lost to rounding.
    """
    absa = np.where(np.isnan(cands), np.inf, np.abs(cands))
    if rule == "closest":
        idx = np.argmin(absa, axis=1)
        return np.take_along_axis(cands, idx[:, None], axis=1)[:, 0]
    a = np.nan_to_num(cands)
    cc = c[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        lin = b[:, None] * _sigma_change(act, cc, -a * s[:, None])
        quad = 0.5 * s[:, None] * kappa[:, None] * a * a
    vals = np.where(np.isnan(cands), np.inf, lin + quad)
    scale = np.abs(lin) + quad
    i_best = np.argmin(vals, axis=1)[:, None]
    best = np.take_along_axis(vals, i_best, axis=1)
    tol = _TIE_RTOL * np.maximum(scale, np.take_along_axis(scale, i_best, axis=1))
    near = vals <= best + tol
    idx = np.argmin(np.where(near, absa, np.inf), axis=1)
    return np.take_along_axis(cands, idx[:, None], axis=1)[:, 0]


def _broadcast(b, c, s, kappa):
    b, c, s, kappa = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (b, c, s, kappa)))
    shape = b.shape
    return shape, b.ravel(), c.ravel(), s.ravel(), kappa.ravel()


# ---------------------------------------------------------------------------
# relu


def relu_core(b, c, s, kappa):
    """Closed-form relu step (five cases, split on the sign of b)."""
    b, c, s, kappa = (np.asarray(v, dtype=np.float64) for v in (b, c, s, kappa))
    full = b / kappa
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        hinge = np.where(s > 0, c / s, 0.0)
    pos = np.where(c <= 0.0, 0.0, np.where(c * kappa <= s * b, hinge, full))
    neg = np.where(c <= 0.5 * s * b / kappa, 0.0, full)
    out = np.where(b > 0, pos, np.where(b < 0, neg, 0.0))
    return np.where(s > 0, out, 0.0)


def _relu_branch(p: AlphaProblem) -> str:
    if p.s == 0 or p.b == 0:
        return "degenerate"
    if p.b > 0:
        if p.c <= 0:
            return "flat"
        return "hinge" if p.c * p.kappa <= p.s * p.b else "slope"
    return "flat" if p.c <= 0.5 * p.s * p.b / p.kappa else "slope"


def solve_alpha_relu(p: AlphaProblem) -> AlphaSolution:
    alpha = float(relu_core(p.b, p.c, p.s, p.kappa))
    return AlphaSolution(alpha, objective(p, acts.relu, alpha), _relu_branch(p))


# ---------------------------------------------------------------------------
# arctan


def _cubic_real_roots(a, b, c):
    """Real roots of monic ``x^3 + a x^2 + b x + c`` (vectorised).

    Returns an (n, 3) array; missing roots are NaN.  Uses the trigonometric
    form for three real roots and Cardano's formula otherwise.
    """
    p = b - a * a / 3.0
    q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c
    p3 = p / 3.0
    disc = 0.25 * q * q + p3 * p3 * p3
    shift = -a / 3.0
    out = np.full(a.shape + (3,), np.nan)

    one = disc > 0
    if np.any(one):
        t = -q[one] / 2.0
        sq = np.sqrt(disc[one])
        u = np.cbrt(t + np.copysign(sq, t))
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(u != 0.0, -p[one] / (3.0 * np.where(u != 0.0, u, 1.0)), 0.0)
        out[one, 0] = u + v + shift[one]

    three = ~one
    if np.any(three):
        pp = p[three]
        qq = q[three]
        # pp < 0 whenever disc <= 0, except the triple root pp == qq == 0.
        neg = pp < 0
        r = np.where(neg, 2.0 * np.sqrt(np.where(neg, -pp / 3.0, 0.0)), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            arg = np.where(neg, 3.0 * qq / (2.0 * np.where(neg, pp, 1.0)) * np.sqrt(np.where(neg, -3.0 / pp, 0.0)), 0.0)
        phi = np.arccos(np.clip(arg, -1.0, 1.0))
        for k in range(3):
            out[three, k] = r * np.cos(phi / 3.0 - 2.0 * math.pi * k / 3.0) + shift[three]
    return out


def _arctan_newton(alpha, b, c, s, kappa, iters=2):
    # Stationarity written without the 1/(1+x^2) denominator.  A Newton step
    # is kept only if it does not increase the residual.
    x = c - alpha * s
    f = kappa * alpha * (1.0 + x * x) - b
    for _ in range(iters):
        df = kappa * ((1.0 + x * x) + 2.0 * alpha * s * x)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = alpha - f / df
        xc = c - cand * s
        fc = kappa * cand * (1.0 + xc * xc) - b
        keep = np.abs(fc) <= np.abs(f)
        alpha = np.where(keep, cand, alpha)
        x = np.where(keep, xc, x)
        f = np.where(keep, fc, f)
    return alpha


def arctan_core(b, c, s, kappa, rule="global"):
    """Arctan step: a real root of the stationarity cubic.

    In terms of the moved pre-activation ``x = c - alpha*s`` the stationarity
    condition is the monic cubic ``x^3 - c x^2 + x - (c - b s / kappa) = 0``.
    ``rule="global"`` returns the root with the lowest objective (ties to the
    smallest ``|alpha|``); ``rule="closest"`` returns the root nearest zero.
    """
    shape, b, c, s, kappa = _broadcast(b, c, s, kappa)
    alpha = np.zeros_like(b)
    degenerate = kappa * s * s < CUBIC_DEGENERATE
    if np.any(degenerate):
        alpha[degenerate] = (b / (kappa * (1.0 + c * c)))[degenerate]
    work = ~degenerate & (b != 0.0) & (s > 0.0)
    if not np.any(work):
        return alpha.reshape(shape)
    idx = np.flatnonzero(work)
    bw, cw, sw, kw = b[idx], c[idx], s[idx], kappa[idx]
    # Depressed cubic t^3 + p t + q with x = t + c/3.
    p = 1.0 - cw * cw / 3.0
    q = -2.0 * cw * cw * cw / 27.0 + cw / 3.0 - (cw - bw * sw / kw)
    p3 = p / 3.0
    disc = 0.25 * q * q + p3 * p3 * p3
    one = disc > 0
    if np.any(one):
        t = -q[one] / 2.0
        u = np.cbrt(t + np.copysign(np.sqrt(disc[one]), t))
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(u != 0.0, -p[one] / (3.0 * u), 0.0)
        x = u + v + cw[one] / 3.0
        b1, c1, s1, k1 = bw[one], cw[one], sw[one], kw[one]
        a1 = _arctan_newton(b1 / (k1 * (1.0 + x * x)), b1, c1, s1, k1)
        alpha[idx[one]] = a1
    three = ~one
    if np.any(three):
        b3, c3, s3, k3 = bw[three], cw[three], sw[three], kw[three]
        xs = _cubic_real_roots(-c3, np.ones_like(c3), -(c3 - b3 * s3 / k3))
        cand = b3[:, None] / (k3[:, None] * (1.0 + xs * xs))
        cand = _arctan_newton(cand, b3[:, None], c3[:, None], s3[:, None], k3[:, None])
        alpha[idx[three]] = _pick(acts.arctan, b3, c3, s3, k3, cand, rule)
    return alpha.reshape(shape)


def solve_alpha_arctan(p: AlphaProblem, rule: str = "global") -> AlphaSolution:
    alpha = float(arctan_core(p.b, p.c, p.s, p.kappa, rule=rule))
    if p.s == 0 or p.b == 0:
        branch = "degenerate"
    elif p.kappa * p.s * p.s < CUBIC_DEGENERATE:
        branch = "eb-limit"
    else:
        branch = f"cubic-{rule}"
    return AlphaSolution(alpha, objective(p, acts.arctan, alpha), branch)


# ---------------------------------------------------------------------------
# piecewise cubic


def _quadratic_roots(a2, a1, a0):
    """Real roots of ``a2 x^2 + a1 x + a0`` (n, 2), NaN where absent."""
    out = np.full(a2.shape + (2,), np.nan)
    lin = a2 == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out[:, 0] = np.where(lin & (a1 != 0.0), -a0 / np.where(a1 != 0.0, a1, 1.0), out[:, 0])
        disc = a1 * a1 - 4.0 * a2 * a0
        ok = ~lin & (disc >= 0.0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        q = -0.5 * (a1 + np.copysign(sq, a1))
        r1 = q / np.where(a2 != 0.0, a2, 1.0)
        r2 = np.where(q != 0.0, a0 / np.where(q != 0.0, q, 1.0), 0.0)
    out[:, 0] = np.where(ok, r1, out[:, 0])
    out[:, 1] = np.where(ok, r2, np.nan)
    return out


def piecewise_core(b, c, s, kappa, piece_list, act: Activation | None = None):
    """Exact step for a piecewise-cubic activation.

    Candidates are every piece boundary (mapped to alpha) plus every
    stationary point that falls inside its own piece; the stationary points
    solve the quadratic ``b s sigma_m'(x) = kappa (c - x)``.
    """
    piece_list = tuple(piece_list)
    if act is None:
        act = acts.piecewise_cubic(piece_list)
    shape, b, c, s, kappa = _broadcast(b, c, s, kappa)
    live = (s > 0.0) & (b != 0.0)
    alpha = np.zeros_like(b)
    if not np.any(live):
        return alpha.reshape(shape)
    # Far-out boundaries can overflow to inf; those candidates simply lose.
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        bl, cl, sl, kl = b[live], c[live], s[live], kappa[live]
        cols = [np.zeros_like(bl)]
        for bound in (p.upper for p in piece_list[:-1]):
            cols.append((cl - bound) / sl)
        for piece in piece_list:
            a3, a2, a1, _ = piece.coeffs
            if piece.degree == 0:
                # Flat piece: the only stationary point is alpha = 0.
                continue
            bs = bl * sl
            roots = _quadratic_roots(3.0 * a3 * bs, 2.0 * a2 * bs + kl, a1 * bs - kl * cl)
            for k in range(2):
                x = roots[:, k]
                inside = (x >= piece.lower) & (x <= piece.upper)
                cols.append(np.where(inside, bl * piece.slope(np.nan_to_num(x)) / kl, np.nan))
        cand = np.stack(cols, axis=1)
        alpha[live] = _pick(act, bl, cl, sl, kl, cand)
    return alpha.reshape(shape)


def solve_alpha_piecewise_cubic(p: AlphaProblem, piece_list) -> AlphaSolution:
    piece_list = tuple(piece_list)
    try:
        act = acts.piecewise_cubic(piece_list)
    except ValueError as exc:
        raise InvalidProblem(f"invalid piece partition: {exc}") from exc
    alpha = float(piecewise_core(p.b, p.c, p.s, p.kappa, piece_list, act))
    branch = "degenerate" if p.s == 0 or p.b == 0 else "piecewise"
    return AlphaSolution(alpha, objective(p, act, alpha), branch)


# ---------------------------------------------------------------------------
# dispatch used by the optimiser


def alpha_core(act: Activation, b, c, s, kappa, arctan_rule="global"):
    if act.kind == acts.RELU:
        return relu_core(b, c, s, kappa)
    if act.kind == acts.ARCTAN:
        return arctan_core(b, c, s, kappa, rule=arctan_rule)
    return piecewise_core(b, c, s, kappa, act.to_pieces(), act)


def solve_alpha(p: AlphaProblem, act: Activation) -> AlphaSolution:
    if act.kind == acts.RELU:
        return solve_alpha_relu(p)
    if act.kind == acts.ARCTAN:
        return solve_alpha_arctan(p)
    return solve_alpha_piecewise_cubic(p, act.to_pieces())


# ---------------------------------------------------------------------------
# bisection oracle


def bisection_core(act: Activation, b, c, s, kappa, tol=1e-12, grid=1024, chunk=2048):
    """Numerical oracle: scan ``J'`` on a grid, bisect every sign change.

    Every stationary point satisfies ``|alpha| <= |b| * sup|sigma'| / kappa``,
    so the bracket ``[-A, A]`` with ``A`` that bound plus ``tol`` holds them
    all.  Among the bisected points the lowest objective wins, ties to the
    smallest ``|alpha|``.  Only ``act.value`` and ``act.slope`` are used.
    """
    if tol <= 0:
        raise InvalidProblem(f"tol must be positive, got {tol}")
    shape, b, c, s, kappa = _broadcast(b, c, s, kappa)
    sup = act.max_abs_slope()
    if not math.isfinite(sup):
        raise InvalidProblem("bisection needs an activation with bounded derivative")
    out = np.zeros_like(b)
    live = np.nonzero((s > 0.0) & (b != 0.0))[0]
    for start in range(0, len(live), chunk):
        rows = live[start : start + chunk]
        out[rows] = _bisect_rows(act, b[rows], c[rows], s[rows], kappa[rows], sup, tol, grid)
    return out.reshape(shape)


def _bisect_rows(act, b, c, s, kappa, sup, tol, grid):
    n = len(b)
    A = np.abs(b) * sup / kappa + tol
    t = np.linspace(-1.0, 1.0, grid + 1)
    pts = A[:, None] * t[None, :]

    def grad(alpha, rows):
        return kappa[rows] * alpha - b[rows] * act.slope(c[rows] - alpha * s[rows])

    rows_all = np.arange(n)
    g = grad(pts, rows_all[:, None])
    pos = g > 0.0
    change = pos[:, :-1] != pos[:, 1:]
    r, k = np.nonzero(change)
    lo = pts[r, k]
    hi = pts[r, k + 1]
    lo_pos = pos[r, k]
    width = np.max(hi - lo) if len(lo) else 0.0
    iters = int(math.ceil(math.log2(width / tol))) + 1 if width > tol else 0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        gm = grad(mid, r) > 0.0
        go_hi = gm == lo_pos  # midpoint has the same sign as lo: root is above
        lo = np.where(go_hi, mid, lo)
        hi = np.where(go_hi, hi, mid)
    roots = 0.5 * (lo + hi)
    vals = objective_core(act, b[r], c[r], s[r], kappa[r], roots)
    # Per-row argmin with ties to smallest |alpha|.
    best = np.full(n, np.inf)
    np.minimum.at(best, r, vals)
    near = vals <= best[r] + _TIE_RTOL * np.maximum(1.0, np.abs(best[r]))
    key = np.where(near, np.abs(roots), np.inf)
    order = np.lexsort((key, r))
    first = np.ones(len(order), dtype=bool)
    first[1:] = r[order][1:] != r[order][:-1]
    out = np.zeros(n)
    sel = order[first]
    out[r[sel]] = roots[sel]
    return out


def solve_alpha_bisection(p: AlphaProblem, act: Activation, tol: float = 1e-12) -> AlphaSolution:
    if tol <= 0:
        raise InvalidProblem(f"tol must be positive, got {tol}")
    alpha = float(bisection_core(act, p.b, p.c, p.s, p.kappa, tol=tol))
    return AlphaSolution(alpha, objective(p, act, alpha), "bisection")


# ---------------------------------------------------------------------------
# parameter updates


def node_update(theta_row, z, alpha: float, eta: float, mu: float) -> np.ndarray:
    theta_row = as_vector(theta_row)
    z = as_vector(z)
    if theta_row.shape != z.shape:
        raise DimensionError(f"theta row length {theta_row.shape[0]} != z length {z.shape[0]}")
    return theta_row / (1.0 + eta * mu) - eta * alpha * z


def implicit_gradient(theta_before, theta_after, eta: float) -> np.ndarray:
    """Gradient implied by an implicit step: ``(before - after) / eta``."""
    if eta <= 0:
        raise InvalidProblem(f"eta must be positive, got {eta}")
    before = np.asarray(theta_before, dtype=np.float64)
    after = np.asarray(theta_after, dtype=np.float64)
    if before.shape != after.shape:
        raise DimensionError(f"shape mismatch {before.shape} vs {after.shape}")
    return (before - after) / eta


def implicit_gradient_from_alpha(theta, z, alpha, eta: float, mu: float):
    """Same quantity as :func:`implicit_gradient` without forming the new row.

    Works for a single row (``alpha`` scalar) or a whole layer (``theta``
    of shape (m, n+1), ``alpha`` of shape (m,)).
    """
    if eta <= 0:
        raise InvalidProblem(f"eta must be positive, got {eta}")
    theta = np.asarray(theta, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    return theta * (mu / (1.0 + eta * mu)) + np.multiply.outer(alpha, z)


def _tail_unbounded_below(act: Activation, b: float) -> bool:
    """True when ``b * sigma(x)`` decreases without bound in some tail."""
    if act.kind == acts.ARCTAN:
        return False
    ps = act.to_pieces()
    for piece, sign in ((ps[0], -1.0), (ps[-1], 1.0)):
        deg = piece.degree
        if deg == 0:
            continue
        lead = piece.coeffs[3 - deg]
        # Sign of sigma(x) as x -> sign * inf.
        tail_sign = math.copysign(1.0, lead) * (sign**deg)
        if b * tail_sign < 0:
            return True
    return False


def infinite_lr_limit(b: float, z_norm_sq: float, mu: float, act: Activation) -> float:
    """Limit of ``-eta * alpha`` as the learning rate goes to infinity.

    Minimises ``b * sigma(beta |z|^2) + mu |z|^2 beta^2 / 2``; the limiting
    row is ``beta * z``.
    """
    if mu < 0 or z_norm_sq < 0:
        raise InvalidProblem("mu and z_norm_sq must be non-negative")
    if b == 0 or z_norm_sq == 0:
        return 0.0
    if mu == 0:
        if act.kind == acts.ARCTAN or _tail_unbounded_below(act, b):
            raise DivergentLimit(
                f"with mu = 0 the limit objective for {act.name} and b = {b} has no finite minimiser"
            )
    bb, cc, ss, kk = np.array([b]), np.zeros(1), np.array([float(z_norm_sq)]), np.array([float(mu)])
    if act.kind == acts.ARCTAN:
        alpha = arctan_core(bb, cc, ss, kk)
    else:
        alpha = piecewise_core(bb, cc, ss, kk, act.to_pieces(), act)
    return float(-alpha[0]) + 0.0
