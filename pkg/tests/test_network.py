import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from implicit_bp import activations as acts
from implicit_bp import network as nw
from implicit_bp.linalg import DimensionError, SeededRng
from implicit_bp.network import Loss

SMOOTH = [acts.arctan, acts.smoothstep, acts.identity]


def targets(loss, rng, n, d):
    if loss == Loss.SOFTMAX_CE:
        return rng.integers(0, d, size=n)
    if loss == Loss.MSE:
        return rng.normal(size=(n, d))
    return (rng.uniform(size=(n, d)) < 0.3).astype(float)


def fd_check(net, loss_fn, grads, rng, n_params=200, h=1e-6):
    """Compare sampled partials against central differences."""
    flat = nw.flatten(net.thetas())
    g = nw.flatten(grads)
    idx = rng.choice(len(flat), size=min(n_params, len(flat)), replace=False)
    worst = 0.0
    for i in idx:
        up = flat.copy()
        up[i] += h
        dn = flat.copy()
        dn[i] -= h
        fd = (loss_fn(nw.unflatten(up, net.thetas())) - loss_fn(nw.unflatten(dn, net.thetas()))) / (2 * h)
        err = abs(fd - g[i])
        ok = err <= 1e-5 or err <= 1e-4 * abs(fd)
        assert ok, f"param {i}: analytic {g[i]} vs fd {fd}"
        worst = max(worst, err)
    return worst


# --- init ------------------------------------------------------------------


def test_glorot_bound_and_zero_bias():
    net = nw.init_params((2, 2), acts.relu, SeededRng(0))
    w = net.layers[0].weights
    assert np.all(np.abs(w) <= math.sqrt(6 / 4))
    assert math.sqrt(6 / 4) == pytest.approx(1.2247448713915890)
    big = nw.init_params((30, 40, 5), acts.relu, SeededRng(1))
    for layer in big.layers:
        assert np.all(layer.bias == 0.0)
        bound = math.sqrt(6 / (layer.n_in + layer.n_out))
        assert np.all(np.abs(layer.weights) <= bound)


def test_init_deterministic():
    a = nw.init_params((4, 3, 2), acts.arctan, SeededRng(5))
    b = nw.init_params((4, 3, 2), acts.arctan, SeededRng(5))
    assert all(np.array_equal(x, y) for x, y in zip(a.thetas(), b.thetas()))


def test_init_rejects_short_dims():
    with pytest.raises(ValueError):
        nw.init_params((3,), acts.relu, SeededRng(0))
    with pytest.raises(ValueError):
        nw.init_params((), acts.relu, SeededRng(0))


# --- forward ---------------------------------------------------------------


def test_zero_net_relu_outputs_zero():
    net = nw.init_params((3, 4, 2), acts.relu, SeededRng(0))
    net = net.with_thetas([np.zeros_like(t) for t in net.thetas()])
    cache = nw.forward(net, np.array([1.0, -2.0, 3.0]))
    assert all(np.all(p == 0) for p in cache.post_act)


def test_identity_weight_relu_layer():
    net = nw.Network((nw.Layer(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), acts.relu),), Loss.MSE)
    assert np.array_equal(nw.forward(net, [1.0, -1.0]).output[0], [1.0, 0.0])


def test_z_aug_last_entry_is_one():
    net = nw.init_params((3, 4, 2), acts.arctan, SeededRng(0))
    cache = nw.forward(net, np.random.default_rng(0).normal(size=(5, 3)))
    for z in cache.z_aug:
        assert np.all(z[:, -1] == 1.0)


def test_width_mismatch():
    net = nw.init_params((3, 2), acts.relu, SeededRng(0))
    with pytest.raises(DimensionError):
        nw.forward(net, np.zeros((1, 4)))


def test_rnn_with_zero_recurrence_is_per_timestep_feedforward():
    rng = SeededRng(2)
    net = nw.init_rnn(3, 4, 2, rng, acts.arctan, acts.identity, Loss.MSE)
    cell = net.layers[0].theta.copy()
    cell[:, 3:7] = 0.0
    net = net.with_thetas([cell, net.layers[1].theta])
    x = np.random.default_rng(3).normal(size=(6, 3))
    ff = nw.Network(
        (nw.Layer(np.concatenate([cell[:, :3], cell[:, -1:]], axis=1), acts.arctan), net.layers[1]), Loss.MSE)
    assert np.allclose(nw.forward(net, x).output, nw.forward(ff, x).output, atol=1e-15)


# --- losses ----------------------------------------------------------------


def test_mse_of_identical_is_zero():
    y = np.array([[0.3, -1.0, 2.0]])
    assert nw.loss_eval(Loss.MSE, y, y) == 0.0


def test_cross_entropy_uniform_logits():
    assert nw.loss_eval(Loss.SOFTMAX_CE, [3], np.zeros((1, 10))) == pytest.approx(math.log(10), abs=1e-15)


def test_cross_entropy_is_shift_stable():
    out = np.array([[1000.0, 0.0, -1000.0]])
    assert np.isfinite(nw.loss_eval(Loss.SOFTMAX_CE, [0], out))
    assert nw.loss_eval(Loss.SOFTMAX_CE, [0], out) == pytest.approx(0.0, abs=1e-300)


def test_bernoulli_perfect_prediction():
    y = np.array([[1.0, 0.0, 1.0, 0.0]])
    logits = np.where(y > 0, 800.0, -800.0)
    assert nw.loss_eval(Loss.BERNOULLI, y, logits) == 0.0


def test_loss_shape_and_label_errors():
    with pytest.raises(DimensionError):
        nw.loss_eval(Loss.MSE, np.zeros((1, 2)), np.zeros((1, 3)))
    with pytest.raises(ValueError, match="labels"):
        nw.loss_eval(Loss.SOFTMAX_CE, [10], np.zeros((1, 10)))


# --- backward --------------------------------------------------------------


def test_b_vanishes_at_mse_minimum():
    net = nw.init_params((3, 4, 2), acts.arctan, SeededRng(0), Loss.MSE)
    x = np.random.default_rng(0).normal(size=(2, 3))
    cache = nw.forward(net, x)
    bc = nw.backward(net, cache, cache.output.copy())
    assert all(np.all(b == 0) for b in bc.b)


def test_single_linear_layer_mse_b():
    net = nw.init_params((3, 4), acts.identity, SeededRng(0), Loss.MSE)
    x = np.random.default_rng(0).normal(size=(1, 3))
    y = np.random.default_rng(1).normal(size=(1, 4))
    cache = nw.forward(net, x)
    b = nw.backward(net, cache, y).b[0]
    assert np.allclose(b, 2 * (cache.output - y) / 4, rtol=0, atol=1e-15)


def test_relu_saturated_rows_have_zero_gradient():
    net = nw.init_params((3, 2), acts.relu, SeededRng(0), Loss.MSE)
    theta = net.layers[0].theta.copy()
    theta[0] = [0.0, 0.0, 0.0, -5.0]  # pre-activation always -5
    net = net.with_thetas([theta])
    x = np.random.default_rng(0).normal(size=(4, 3))
    _, g = nw.loss_and_gradients(net, x, np.ones((4, 2)))
    assert np.all(g[0][0] == 0.0)
    assert np.any(g[0][1] != 0.0)


def test_zero_b_gives_zero_gradient():
    net = nw.init_params((3, 2), acts.arctan, SeededRng(0), Loss.MSE)
    x = np.ones((1, 3))
    cache = nw.forward(net, x)
    bc = nw.BackwardCache([np.zeros((1, 2))])
    assert np.all(nw.eb_layer_gradient(net, cache, bc, 0) == 0)
    with pytest.raises(IndexError):
        nw.eb_layer_gradient(net, cache, bc, 3)


def test_backward_rejects_foreign_cache():
    a = nw.init_params((3, 2), acts.relu, SeededRng(0))
    b = nw.init_params((3, 4, 2), acts.relu, SeededRng(0))
    cache = nw.forward(a, np.zeros((1, 3)))
    with pytest.raises(ValueError):
        nw.backward(b, cache, [0])


@given(st.integers(0, 10_000))
def test_bias_column_is_slope_times_b(seed):
    rng = SeededRng(seed)
    net = nw.init_params((3, 5, 2), acts.arctan, rng, Loss.MSE)
    x = rng.normal(size=(1, 3))
    cache = nw.forward(net, x)
    bc = nw.backward(net, cache, rng.normal(size=(1, 2)))
    for k in range(2):
        g = nw.eb_layer_gradient(net, cache, bc, k)
        expected = net.layers[k].activation.slope(cache.pre_act[k][0]) * bc.b[k][0]
        assert np.allclose(g[:, -1], expected, rtol=0, atol=1e-15)


def test_weight_perturbation_changes_loss_by_gradient():
    net = nw.init_params((4, 5, 3), acts.arctan, SeededRng(3), Loss.MSE)
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(1, 4)), rng.normal(size=(1, 3))
    loss0, g = nw.loss_and_gradients(net, x, y)
    theta = net.layers[0].theta.copy()
    theta[2, 1] += 1e-6
    loss1 = nw.loss_eval(Loss.MSE, y, nw.forward(net.with_thetas([theta, net.layers[1].theta]), x).output)
    assert abs((loss1 - loss0) - g[0][2, 1] * 1e-6) <= 1e-9


@pytest.mark.parametrize("loss", list(Loss))
def test_feedforward_gradient_check(loss):
    rng = SeededRng(100 + list(Loss).index(loss))
    for trial in range(20):
        n_layers = int(rng.integers(1, 4))
        dims = [int(rng.integers(1, 9)) for _ in range(n_layers + 1)]
        if loss == Loss.SOFTMAX_CE:
            dims[-1] = max(dims[-1], 2)
        plan = [SMOOTH[int(rng.integers(0, 3))] for _ in range(n_layers)]
        net = nw.init_params(dims, plan, rng, loss)
        net = net.with_thetas([t + 0.1 * rng.normal(size=t.shape) for t in net.thetas()])
        x = rng.normal(size=(3, dims[0]))
        y = targets(loss, rng.generator, 3, dims[-1])
        _, g = nw.loss_and_gradients(net, x, y)

        def f(thetas):
            return nw.loss_eval(loss, y, nw.forward(net.with_thetas(thetas), x).output)

        fd_check(net, f, g, rng.generator, n_params=200)


def test_rnn_gradient_check():
    rng = SeededRng(7)
    for trial in range(5):
        n_in, hidden, T = int(rng.integers(1, 6)), int(rng.integers(1, 6)), int(rng.integers(1, 7))
        net = nw.init_rnn(n_in, hidden, n_in, rng, acts.arctan, acts.identity, Loss.BERNOULLI)
        net = net.with_thetas([t + 0.1 * rng.normal(size=t.shape) for t in net.thetas()])
        x = (rng.uniform(size=(T, n_in)) < 0.5).astype(float)
        y = (rng.uniform(size=(T, n_in)) < 0.5).astype(float)
        _, g = nw.loss_and_gradients(net, x, y)

        def f(thetas):
            return nw.loss_eval(Loss.BERNOULLI, y, nw.forward(net.with_thetas(thetas), x).output)

        fd_check(net, f, g, rng.generator)


def test_flatten_roundtrip():
    net = nw.init_params((3, 4, 2), acts.relu, SeededRng(0))
    back = nw.unflatten(nw.flatten(net.thetas()), net.thetas())
    assert all(np.array_equal(a, b) for a, b in zip(back, net.thetas()))
    assert nw.flatten(net.thetas()).size == net.n_params
