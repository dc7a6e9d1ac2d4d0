"""Training steps: explicit backprop, implicit backprop, exact ISGD.

A batch is ``(X, y)`` for a feedforward net.  For an RNN a batch is a list
of ``(X, Y)`` sequence pairs (targets are the next frames); the usual RNN
setting is one sequence per batch.

IB per batch: every sample (or RNN timestep) contributes one scalar
problem per output node, solved at the shared pre-step parameters.  The
per-sample steps are averaged over the batch (summed over timesteps of a
sequence), and all layers move simultaneously.  Steps are expressed as
``theta_new = theta - eta * g`` where for IB ``g`` is the implied implicit
gradient, so clipping treats both methods the same way.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import network as nw
from .network import Network
from .solvers import alpha_core, node_update

EB = "eb"
IB = "ib"
EXACT_ISGD = "exact-isgd"
METHODS = (EB, IB, EXACT_ISGD)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    method: str
    eta: float
    mu: float = 0.0
    clip: float | None = None
    restart: bool = False
    batch_size: int = 100
    inner_steps: int = 100
    inner_lr_ratio: float = 0.1
    arctan_rule: str = "global"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ConfigError(f"eta must be positive and finite, got {self.eta}")
        if self.mu < 0:
            raise ConfigError(f"mu must be non-negative, got {self.mu}")
        if self.clip is not None and not self.clip > 0:
            raise ConfigError(f"clip threshold must be positive, got {self.clip}")
        if self.restart and self.mu <= 0:
            raise ConfigError("restarting needs mu > 0 (the level set is unbounded otherwise)")
        if self.batch_size < 1 or self.inner_steps < 1 or not self.inner_lr_ratio > 0:
            raise ConfigError("batch_size, inner_steps and inner_lr_ratio must be positive")
        if self.arctan_rule not in ("global", "closest"):
            raise ConfigError(f"arctan_rule must be 'global' or 'closest', got {self.arctan_rule!r}")

    def with_eta(self, eta: float) -> "OptimizerConfig":
        return replace(self, eta=eta)


@dataclass
class TrainState:
    net: Network
    step_count: int = 0
    ell_zero: float | None = None


def _check_batch(net: Network, batch):
    if net.kind == nw.RNN:
        if len(batch) == 0:
            raise ValueError("empty batch")
        return
    x, y = batch
    if len(x) == 0:
        raise ValueError("empty batch")


# ---------------------------------------------------------------------------
# gradients


def batch_gradients(net: Network, batch) -> list[np.ndarray]:
    """EB gradient of the batch-mean loss (no ridge term)."""
    _check_batch(net, batch)
    if net.kind == nw.RNN:
        return nw.full_gradient(net, batch)
    x, y = batch
    return nw.loss_and_gradients(net, x, y)[1]


def batch_loss(net: Network, batch) -> float:
    return nw.dataset_loss(net, batch)


def ib_gradients(net: Network, batch, eta: float, mu: float, arctan_rule: str = "global") -> list[np.ndarray]:
    """Implied gradient ``(theta_t - theta_{t+1}) / eta`` of an IB step.

    Built as ``mu * theta / kappa + mean_i alpha_i^T z_i``, which equals the
    difference quotient exactly but never subtracts two nearly equal
    parameter vectors.
    """
    _check_batch(net, batch)
    kappa = 1.0 + eta * mu
    if net.kind == nw.RNN:
        pairs = list(batch)
        scale = 1.0 / len(pairs)
    else:
        pairs = [batch]
        scale = 1.0 / len(batch[0])
    sums = [np.zeros_like(t) for t in net.thetas()]
    for x, y in pairs:
        cache = nw.forward(net, x)
        bcache = nw.backward(net, cache, y)
        for k, layer in enumerate(net.layers):
            z = cache.z_aug[k]
            s = eta * np.einsum("ij,ij->i", z, z)[:, None]
            with np.errstate(over="ignore", invalid="ignore"):
                alpha = alpha_core(layer.activation, bcache.b[k], cache.pre_act[k] / kappa, s, kappa,
                                   arctan_rule=arctan_rule)
                sums[k] += alpha.T @ z
    return [t * (mu / kappa) + scale * g for t, g in zip(net.thetas(), sums)]


def eb_full_gradients(net: Network, batch, mu: float) -> list[np.ndarray]:
    return [g + mu * t for g, t in zip(batch_gradients(net, batch), net.thetas())]


def clip_gradient(g, threshold: float) -> np.ndarray:
    """Rescale ``g`` to norm ``threshold`` if it is longer; else return it."""
    if not threshold > 0:
        raise ConfigError(f"clip threshold must be positive, got {threshold}")
    g = np.asarray(g, dtype=np.float64)
    norm = float(np.linalg.norm(g))
    if norm > threshold:
        return g * (threshold / norm)
    return g


def _apply(net: Network, grads, cfg: OptimizerConfig) -> Network:
    if cfg.clip is not None:
        flat = clip_gradient(nw.flatten(grads), cfg.clip)
        grads = nw.unflatten(flat, grads)
    with np.errstate(over="ignore", invalid="ignore"):
        return net.with_thetas([t - cfg.eta * g for t, g in zip(net.thetas(), grads)])


def restart(theta, mu: float, ell_zero: float) -> np.ndarray:
    """Keep ``theta`` inside ``{|theta|^2 <= 2 ell(0) / mu}``, else reset to 0."""
    if not mu > 0:
        raise ConfigError(f"restart needs mu > 0, got {mu}")
    if ell_zero < 0:
        raise ConfigError(f"ell_zero must be non-negative, got {ell_zero}")
    theta = np.asarray(theta, dtype=np.float64)
    sq = float(theta @ theta)
    if sq <= 2.0 * ell_zero / mu:
        return theta
    return np.zeros_like(theta)


def zero_loss(net: Network, data) -> float:
    """Training loss at all-zero parameters (the restart level set radius)."""
    zero = net.with_thetas([np.zeros_like(t) for t in net.thetas()])
    return nw.dataset_loss(zero, data)


def _finish(state: TrainState, net: Network, cfg: OptimizerConfig) -> TrainState:
    if cfg.restart:
        if state.ell_zero is None:
            raise ConfigError("restart enabled but ell_zero was not computed; call prepare_state first")
        flat = restart(nw.flatten(net.thetas()), cfg.mu, state.ell_zero)
        net = net.with_thetas(nw.unflatten(flat, net.thetas()))
    return TrainState(net, state.step_count + 1, state.ell_zero)


def prepare_state(net: Network, data, cfg: OptimizerConfig) -> TrainState:
    ell_zero = zero_loss(net, data) if cfg.restart else None
    return TrainState(net, 0, ell_zero)


# ---------------------------------------------------------------------------
# steps


def eb_step(state: TrainState, batch, cfg: OptimizerConfig) -> TrainState:
    grads = eb_full_gradients(state.net, batch, cfg.mu)
    return _finish(state, _apply(state.net, grads, cfg), cfg)


def ib_step(state: TrainState, batch, cfg: OptimizerConfig) -> TrainState:
    grads = ib_gradients(state.net, batch, cfg.eta, cfg.mu, cfg.arctan_rule)
    return _finish(state, _apply(state.net, grads, cfg), cfg)


def _prox_descent(net: Network, batch, eta, mu, steps, lr, layer=None):
    """Gradient descent on ``L(theta) + mu/2 |theta|^2 + |theta - theta_t|^2 / (2 eta)``.

    The objective is the implicit-step objective divided by ``2 eta`` (same
    minimiser).  With ``layer`` set only that layer moves.
    """
    anchor = [t.copy() for t in net.thetas()]
    cur = net
    ks = range(len(anchor)) if layer is None else [layer]
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            grads = batch_gradients(cur, batch)
            thetas = [t.copy() for t in cur.thetas()]
            for k in ks:
                g = grads[k] + mu * thetas[k] + (thetas[k] - anchor[k]) / eta
                thetas[k] = thetas[k] - lr * g
            cur = cur.with_thetas(thetas)
    return cur


def exact_isgd_step(state: TrainState, batch, cfg: OptimizerConfig) -> TrainState:
    """Approximately exact implicit step by inner gradient descent.

    Runs ``cfg.inner_steps`` plain GD steps at ``cfg.inner_lr_ratio * eta``
    from the current parameters.  ``batch`` may hold one sample or several
    (the batch-mean loss is used).
    """
    _check_batch(state.net, batch)
    net = _prox_descent(state.net, batch, cfg.eta, cfg.mu, cfg.inner_steps, cfg.inner_lr_ratio * cfg.eta)
    if cfg.clip is not None:
        grads = [(a - b) / cfg.eta for a, b in zip(state.net.thetas(), net.thetas())]
        net = _apply(state.net, grads, cfg)
    return _finish(state, net, cfg)


def layerwise_exact_oracle(state: TrainState, batch, k: int, cfg: OptimizerConfig,
                           steps: int = 500, lr_ratio: float = 1.0 / 20.0) -> nw.Layer:
    """Exact layer-wise implicit update of layer ``k`` (others held fixed).

    Unlike IB, the layers above ``k`` are not linearised.  Test utility for
    small networks.
    """
    if not 0 <= k < len(state.net.layers):
        raise IndexError(f"layer index {k} out of range")
    net = _prox_descent(state.net, batch, cfg.eta, cfg.mu, steps, lr_ratio * cfg.eta, layer=k)
    return net.layers[k]


def step(state: TrainState, batch, cfg: OptimizerConfig) -> TrainState:
    if cfg.method == EB:
        return eb_step(state, batch, cfg)
    if cfg.method == IB:
        return ib_step(state, batch, cfg)
    return exact_isgd_step(state, batch, cfg)


# ---------------------------------------------------------------------------
# toy problem: loss theta^2 / 2 on one parameter


def quadratic_toy_step(theta: float, eta: float, method: str) -> float:
    """One step on ``l(theta) = theta^2 / 2``.

    The toy is a single parameter whose whole loss is a ridge term with
    ``mu = 1`` and no data term, so the node machinery applies directly:
    EB gives ``theta * (1 - eta)``, the implicit node update (``alpha = 0``
    since the data gradient vanishes) gives ``theta / (1 + eta)``, and exact
    ISGD runs the inner descent of :func:`exact_isgd_step`.
    """
    if method == EB:
        return theta - eta * theta
    if method == IB:
        return float(node_update(np.array([theta]), np.array([1.0]), 0.0, eta, 1.0)[0])
    if method == EXACT_ISGD:
        cur, lr = theta, 0.1 * eta
        for _ in range(100):
            cur = cur - lr * (cur + (cur - theta) / eta)
        return cur
    raise ConfigError(f"unknown method {method!r}")
