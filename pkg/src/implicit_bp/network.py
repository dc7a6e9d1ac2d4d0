"""Dense feedforward and simple recurrent networks.

Every layer stores its parameters as one matrix ``theta`` of shape
``(out, in + 1)`` whose last column is the bias, so a layer input is always
used in augmented form ``z = (x, 1)`` and row ``j`` of ``theta`` holds all
parameters of output node ``j``.

Backward passes return ``b``: the gradient of the loss with respect to each
layer's post-activation output, per sample (feedforward) or per timestep
(recurrent, where ``b`` for the cell is the full BPTT gradient reaching
``h_t``).  That is the quantity the implicit solvers consume.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import activations as acts
from .activations import Activation
from .linalg import DimensionError, SeededRng

FEEDFORWARD = "feedforward"
RNN = "rnn"


class Loss(str, Enum):
    SOFTMAX_CE = "softmax-ce"
    MSE = "mse"
    BERNOULLI = "bernoulli"


@dataclass
class Layer:
    theta: np.ndarray
    activation: Activation

    @property
    def weights(self) -> np.ndarray:
        return self.theta[:, :-1]

    @property
    def bias(self) -> np.ndarray:
        return self.theta[:, -1]

    @property
    def n_in(self) -> int:
        return self.theta.shape[1] - 1

    @property
    def n_out(self) -> int:
        return self.theta.shape[0]


@dataclass
class Network:
    """A feedforward stack or a simple RNN.

    For ``kind == "rnn"`` there are exactly two layers: the recurrent cell,
    whose input is ``(x_t, h_{t-1}, 1)`` so its weight block is
    ``[W_in | W_rec]``, and the output layer applied to ``(h_t, 1)``.
    """

    layers: tuple[Layer, ...]
    loss: Loss
    kind: str = FEEDFORWARD

    def __post_init__(self):
        self.layers = tuple(self.layers)
        self.loss = Loss(self.loss)
        if self.kind == FEEDFORWARD:
            for lo, hi in zip(self.layers, self.layers[1:]):
                if hi.n_in != lo.n_out:
                    raise DimensionError(f"layer widths do not chain: {lo.n_out} -> {hi.n_in}")
        elif self.kind == RNN:
            if len(self.layers) != 2:
                raise DimensionError("an RNN has a cell layer and an output layer")
            cell, out = self.layers
            if cell.n_in <= cell.n_out or out.n_in != cell.n_out:
                raise DimensionError("RNN blocks do not chain")
        else:
            raise ValueError(f"unknown network kind {self.kind!r}")

    @property
    def hidden(self) -> int | None:
        return self.layers[0].n_out if self.kind == RNN else None

    @property
    def n_inputs(self) -> int:
        if self.kind == RNN:
            return self.layers[0].n_in - self.layers[0].n_out
        return self.layers[0].n_in

    def thetas(self) -> list[np.ndarray]:
        return [layer.theta for layer in self.layers]

    def with_thetas(self, thetas) -> "Network":
        layers = tuple(Layer(np.asarray(t, dtype=np.float64), l.activation) for t, l in zip(thetas, self.layers))
        return replace(self, layers=layers)

    def copy(self) -> "Network":
        return self.with_thetas([t.copy() for t in self.thetas()])

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.thetas())


def flatten(thetas) -> np.ndarray:
    return np.concatenate([np.ravel(t) for t in thetas])


def unflatten(vec, like) -> list[np.ndarray]:
    out, i = [], 0
    for t in like:
        out.append(np.asarray(vec[i : i + t.size]).reshape(t.shape))
        i += t.size
    return out


def glorot_uniform(n_in: int, n_out: int, rng: SeededRng) -> np.ndarray:
    bound = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_out, n_in))


def init_params(dims, activation_plan, rng: SeededRng, loss=Loss.SOFTMAX_CE) -> Network:
    """Glorot-uniform weights, zero biases, for a feedforward stack.

    ``activation_plan`` is one activation for every layer or a sequence with
    one entry per layer.
    """
    dims = list(dims)
    if len(dims) < 2:
        raise ValueError(f"dims needs at least an input and an output width, got {dims}")
    n_layers = len(dims) - 1
    plan = _expand_plan(activation_plan, n_layers)
    layers = []
    for n_in, n_out, act in zip(dims[:-1], dims[1:], plan):
        theta = np.zeros((n_out, n_in + 1))
        theta[:, :-1] = glorot_uniform(n_in, n_out, rng)
        layers.append(Layer(theta, act))
    return Network(tuple(layers), loss, FEEDFORWARD)


def init_rnn(n_in: int, hidden: int, n_out: int, rng: SeededRng, activation=acts.arctan,
             output_activation=acts.identity, loss=Loss.BERNOULLI) -> Network:
    cell = np.zeros((hidden, n_in + hidden + 1))
    cell[:, :n_in] = glorot_uniform(n_in, hidden, rng)
    cell[:, n_in:-1] = glorot_uniform(hidden, hidden, rng)
    out = np.zeros((n_out, hidden + 1))
    out[:, :-1] = glorot_uniform(hidden, n_out, rng)
    activation = acts.by_name(activation) if isinstance(activation, str) else activation
    output_activation = acts.by_name(output_activation) if isinstance(output_activation, str) else output_activation
    return Network((Layer(cell, activation), Layer(out, output_activation)), loss, RNN)


def _expand_plan(plan, n_layers):
    if isinstance(plan, (Activation, str)):
        plan = [plan] * n_layers
    plan = [acts.by_name(a) if isinstance(a, str) else a for a in plan]
    if len(plan) != n_layers:
        raise ValueError(f"activation plan has {len(plan)} entries for {n_layers} layers")
    return plan


# ---------------------------------------------------------------------------
# forward / loss / backward


@dataclass
class ForwardCache:
    """Per-layer augmented inputs, pre- and post-activations.

    Arrays have one row per sample (feedforward) or per timestep (RNN).
    """

    z_aug: list[np.ndarray]
    pre_act: list[np.ndarray]
    post_act: list[np.ndarray]
    output: np.ndarray
    kind: str = FEEDFORWARD


@dataclass
class BackwardCache:
    b: list[np.ndarray]
    loss_scale: float = 1.0
    extra: dict = field(default_factory=dict)


def _augment(x):
    return np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)


def forward(net: Network, x) -> ForwardCache:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != net.n_inputs:
        raise DimensionError(f"input width {x.shape[1]} does not match network input {net.n_inputs}")
    if net.kind == RNN:
        return _forward_rnn(net, x)
    zs, pres, posts = [], [], []
    h = x
    with np.errstate(over="ignore", invalid="ignore"):
        for layer in net.layers:
            z = _augment(h)
            a = z @ layer.theta.T
            h = layer.activation.value(a)
            zs.append(z)
            pres.append(a)
            posts.append(h)
    return ForwardCache(zs, pres, posts, h, FEEDFORWARD)


def _forward_rnn(net: Network, x) -> ForwardCache:
    cell, out = net.layers
    T, H = x.shape[0], cell.n_out
    zc = np.empty((T, cell.n_in + 1))
    ac = np.empty((T, H))
    hs = np.empty((T, H))
    h = np.zeros(H)
    wc = cell.theta
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            zc[t, : x.shape[1]] = x[t]
            zc[t, x.shape[1] : -1] = h
            zc[t, -1] = 1.0
            ac[t] = wc @ zc[t]
            h = cell.activation.value(ac[t])
            hs[t] = h
        zo = _augment(hs)
        ao = zo @ out.theta.T
        o = out.activation.value(ao)
    return ForwardCache([zc, zo], [ac, ao], [hs, o], o, RNN)


def _check_targets(loss: Loss, y, out):
    if loss == Loss.SOFTMAX_CE:
        y = np.asarray(y)
        if y.ndim != 1 or y.shape[0] != out.shape[0]:
            raise DimensionError(f"expected {out.shape[0]} integer labels, got shape {y.shape}")
        if y.size and (y.min() < 0 or y.max() >= out.shape[1]):
            raise ValueError(f"labels must lie in [0, {out.shape[1]})")
        return y.astype(np.int64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    if y.shape != out.shape:
        raise DimensionError(f"target shape {y.shape} does not match output shape {out.shape}")
    return y


def per_sample_loss(loss: Loss, y, out) -> np.ndarray:
    """Loss of each row of ``out``.

    Cross-entropy uses a max-shifted log-softmax; MSE averages over the D
    outputs; the Bernoulli frame loss treats ``out`` as logits and averages
    the per-note negative log-likelihood over the notes.
    """
    loss = Loss(loss)
    out = np.asarray(out, dtype=np.float64)
    if out.ndim == 1:
        out = out[None, :]
    y = _check_targets(loss, y, out)
    with np.errstate(over="ignore", invalid="ignore"):
        if loss == Loss.SOFTMAX_CE:
            shifted = out - out.max(axis=1, keepdims=True)
            logz = np.log(np.exp(shifted).sum(axis=1))
            return logz - shifted[np.arange(out.shape[0]), y]
        if loss == Loss.MSE:
            return np.mean((out - y) ** 2, axis=1)
        nll = y * np.logaddexp(0.0, -out) + (1.0 - y) * np.logaddexp(0.0, out)
        return np.mean(nll, axis=1)


def loss_eval(loss: Loss, y_true, net_output) -> float:
    """Mean loss over the rows (samples, or timesteps of one sequence)."""
    return float(np.mean(per_sample_loss(loss, y_true, net_output)))


def output_gradient(loss: Loss, y, out) -> np.ndarray:
    """Per-row gradient of the per-row loss with respect to the output."""
    loss = Loss(loss)
    y = _check_targets(loss, y, out)
    with np.errstate(over="ignore", invalid="ignore"):
        if loss == Loss.SOFTMAX_CE:
            shifted = out - out.max(axis=1, keepdims=True)
            p = np.exp(shifted)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(out.shape[0]), y] -= 1.0
            return p
        if loss == Loss.MSE:
            return 2.0 * (out - y) / out.shape[1]
        sig = 0.5 * (1.0 + np.tanh(0.5 * out))
        return (sig - y) / out.shape[1]


def backward(net: Network, cache: ForwardCache, y_true) -> BackwardCache:
    """Backpropagate to get ``b`` for every layer.

    Feedforward: rows of ``b`` are gradients of each sample's own loss.
    RNN: the sequence loss is the mean over timesteps, so ``b`` already
    carries the ``1/T`` factor and gradients are sums over timesteps.
    """
    if cache.kind != net.kind or len(cache.z_aug) != len(net.layers):
        raise ValueError("forward cache does not belong to this network")
    top = output_gradient(net.loss, y_true, cache.output)
    if net.kind == RNN:
        return _backward_rnn(net, cache, top / top.shape[0])
    bs = [None] * len(net.layers)
    b = top
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(len(net.layers) - 1, -1, -1):
            bs[k] = b
            if k:
                delta = b * net.layers[k].activation.slope(cache.pre_act[k])
                b = delta @ net.layers[k].theta[:, :-1]
    return BackwardCache(bs, 1.0)


def _backward_rnn(net, cache, bo):
    cell, out = net.layers
    n_x = net.n_inputs
    H = cell.n_out
    T = bo.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        delta_o = bo * out.activation.slope(cache.pre_act[1])
        dh_direct = delta_o @ out.theta[:, :-1]
        slope_c = cell.activation.slope(cache.pre_act[0])
        w_rec = cell.theta[:, n_x : n_x + H]
        bc = np.empty((T, H))
        carry = np.zeros(H)
        for t in range(T - 1, -1, -1):
            dh = dh_direct[t] + carry
            bc[t] = dh
            carry = (dh * slope_c[t]) @ w_rec
    return BackwardCache([bc, bo], 1.0 / T)


def layer_deltas(net: Network, cache: ForwardCache, bcache: BackwardCache) -> list[np.ndarray]:
    """``b * sigma'(pre)`` for each layer: gradient at the pre-activation."""
    with np.errstate(over="ignore", invalid="ignore"):
        return [b * layer.activation.slope(a) for b, layer, a in zip(bcache.b, net.layers, cache.pre_act)]


def eb_layer_gradient(net: Network, cache: ForwardCache, bcache: BackwardCache, k: int) -> np.ndarray:
    """Gradient of the (batch-mean / sequence) loss for layer ``k``'s theta.

    Row ``j`` is ``sigma'(theta_j . z) * b_j * z`` summed over timesteps, or
    averaged over the samples of a feedforward batch.  The last column is the
    bias gradient (the augmented coordinate is 1).
    """
    if not 0 <= k < len(net.layers):
        raise IndexError(f"layer index {k} out of range for {len(net.layers)} layers")
    with np.errstate(over="ignore", invalid="ignore"):
        delta = bcache.b[k] * net.layers[k].activation.slope(cache.pre_act[k])
        g = delta.T @ cache.z_aug[k]
    if net.kind == FEEDFORWARD:
        g /= cache.z_aug[k].shape[0]
    return g


def eb_gradients(net: Network, cache: ForwardCache, bcache: BackwardCache) -> list[np.ndarray]:
    return [eb_layer_gradient(net, cache, bcache, k) for k in range(len(net.layers))]


def loss_and_gradients(net: Network, x, y) -> tuple[float, list[np.ndarray]]:
    cache = forward(net, x)
    loss = loss_eval(net.loss, y, cache.output)
    return loss, eb_gradients(net, cache, backward(net, cache, y))


# ---------------------------------------------------------------------------
# dataset-level evaluation


def dataset_loss(net: Network, data, chunk: int = 4096) -> float:
    """Mean loss over a whole dataset (no ridge term).

    ``data`` is ``(X, y)`` for a feedforward net or a list of ``(X, Y)``
    sequence pairs for an RNN (mean over sequences of the per-sequence
    timestep-averaged loss).
    """
    if net.kind == RNN:
        vals = [loss_eval(net.loss, yy, forward(net, xx).output) for xx, yy in data]
        return float(np.mean(vals))
    x, y = data
    total = 0.0
    for i in range(0, len(x), chunk):
        out = forward(net, x[i : i + chunk]).output
        total += float(np.sum(per_sample_loss(net.loss, y[i : i + chunk], out)))
    return total / len(x)


def accuracy(net: Network, data, chunk: int = 4096) -> float | None:
    if net.kind == RNN or net.loss != Loss.SOFTMAX_CE:
        return None
    x, y = data
    hits = 0
    for i in range(0, len(x), chunk):
        out = forward(net, x[i : i + chunk]).output
        hits += int(np.sum(np.argmax(out, axis=1) == y[i : i + chunk]))
    return hits / len(x)


def full_gradient(net: Network, data) -> list[np.ndarray]:
    """Gradient of :func:`dataset_loss` (no ridge term)."""
    if net.kind == RNN:
        grads = None
        for xx, yy in data:
            _, g = loss_and_gradients(net, xx, yy)
            grads = g if grads is None else [a + b for a, b in zip(grads, g)]
        return [g / len(data) for g in grads]
    x, y = data
    _, g = loss_and_gradients(net, x, y)
    return g
