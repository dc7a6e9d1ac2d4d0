import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from implicit_bp import activations as acts
from implicit_bp import solvers as sv
from implicit_bp.linalg import DimensionError
from implicit_bp.solvers import AlphaProblem, DivergentLimit, InvalidProblem

from oracles import grid_argmin, random_problems, step_objective

ACTS = {"relu": acts.relu, "arctan": acts.arctan, "hardtanh": acts.hardtanh, "smoothstep": acts.smoothstep}

# Frozen values from grid_argmin (step 1e-5 on [-3, 3]); the tests also
# re-run the grid so a drifting oracle is noticed.
FROZEN = [
    ("relu", (1.0, -0.3, 1.0, 0.0, 1.0), 0.0),
    ("relu", (1.0, 0.5, 1.0, 0.0, 1.0), 0.5),
    ("relu", (-2.0, 1.0, 0.1, 0.0, 4.0), -2.0),
    ("hardtanh", (0.5, 0.0, 0.1, 0.0, 1.0), 0.5),
    ("hardtanh", (1.0, -5.0, 0.1, 0.0, 1.0), 0.0),
]


problem = st.builds(
    AlphaProblem,
    b=st.floats(-100, 100, allow_nan=False),
    theta_dot_z=st.floats(-10, 10, allow_nan=False),
    eta=st.floats(1e-4, 10),
    mu=st.one_of(st.just(0.0), st.floats(1e-4, 1.0)),
    z_norm_sq=st.floats(0.0, 100.0),
)


# --- objective -------------------------------------------------------------


def test_objective_at_zero_is_b_sigma_c():
    p = AlphaProblem(0.7, 1.2, 0.5, 0.3, 2.0)
    assert sv.objective(p, acts.arctan, 0.0) == pytest.approx(0.7 * math.atan(1.2 / 1.15), abs=1e-15)


def test_objective_examples():
    assert sv.objective(AlphaProblem(1.0, -1.0, 1.0, 0.0, 1.0), acts.relu, 0.0) == 0.0
    assert sv.objective(AlphaProblem(1.0, 0.5, 1.0, 0.0, 1.0), acts.relu, 0.5) == 0.125


def test_invalid_problem_fields():
    for args in [(1, 0, 0.0, 0, 1), (1, 0, 1, -1, 1), (1, 0, 1, 0, -1), (math.nan, 0, 1, 0, 1)]:
        with pytest.raises(InvalidProblem):
            AlphaProblem(*args)


# --- frozen examples -------------------------------------------------------


@pytest.mark.parametrize("name, args, expected", FROZEN)
def test_frozen_examples_match_grid_oracle(name, args, expected):
    alpha, _ = grid_argmin(name, *args)
    assert alpha == pytest.approx(expected, abs=2e-5)


@pytest.mark.parametrize("name, args, expected", FROZEN)
def test_frozen_examples(name, args, expected):
    p = AlphaProblem(*args)
    sol = sv.solve_alpha_relu(p) if name == "relu" else sv.solve_alpha_piecewise_cubic(p, acts.pieces(ACTS[name]))
    assert sol.alpha == pytest.approx(expected, abs=1e-12)


def test_relu_branches():
    assert sv.solve_alpha_relu(AlphaProblem(1.0, -0.3, 1.0, 0.0, 1.0)).branch == "flat"
    assert sv.solve_alpha_relu(AlphaProblem(1.0, 0.5, 1.0, 0.0, 1.0)).branch == "hinge"
    assert sv.solve_alpha_relu(AlphaProblem(-2.0, 1.0, 0.1, 0.0, 4.0)).branch == "slope"
    assert sv.solve_alpha_relu(AlphaProblem(1.0, 1.0, 1.0, 0.0, 0.0)).alpha == 0.0


def test_relu_all_five_cases_against_grid():
    cases = [
        (2.0, -1.0, 0.5, 0.2, 1.0),   # b>0, flat
        (2.0, 0.3, 0.5, 0.2, 1.0),    # b>0, hinge
        (0.2, 2.0, 0.5, 0.2, 1.0),    # b>0, full step
        (-1.0, -2.0, 0.5, 0.2, 1.0),  # b<0, stay
        (-1.0, 0.5, 0.5, 0.2, 1.0),   # b<0, full step
    ]
    for args in cases:
        expected, _ = grid_argmin("relu", *args)
        assert sv.solve_alpha_relu(AlphaProblem(*args)).alpha == pytest.approx(expected, abs=2e-5)


def test_arctan_zero_b():
    assert sv.solve_alpha_arctan(AlphaProblem(0.0, 3.0, 1.0, 0.0, 1.0)).alpha == 0.0


def test_arctan_tiny_eta_recovers_eb_limit():
    assert sv.solve_alpha_arctan(AlphaProblem(1.0, 0.0, 1e-6, 0.0, 1.0)).alpha == pytest.approx(1.0, abs=1e-5)


def test_arctan_multi_root_regime_matches_bisection():
    p = AlphaProblem(10.0, 10.0, 1.0, 0.0, 1.0)
    oracle = sv.solve_alpha_bisection(p, acts.arctan)
    for rule in ("closest", "global"):
        sol = sv.solve_alpha_arctan(p, rule)
        assert sol.objective <= oracle.objective + 1e-8
        assert sol.alpha == pytest.approx(oracle.alpha, abs=1e-8)


def test_arctan_closest_rule_returns_smallest_root():
    # Three stationary points; the nearest-zero one is a local minimum with a
    # worse objective than the far one.
    b, c, s, k = random_problems(10_000, 3)
    closest = sv.arctan_core(b, c, s, k, rule="closest")
    best = sv.arctan_core(b, c, s, k, rule="global")
    jc = sv.objective_core(acts.arctan, b, c, s, k, closest)
    jb = sv.objective_core(acts.arctan, b, c, s, k, best)
    assert np.all(jb <= jc + 1e-12)
    assert np.all(np.abs(closest) <= np.abs(best) + 1e-12)


def test_bisection_rejects_bad_tol():
    with pytest.raises(InvalidProblem):
        sv.solve_alpha_bisection(AlphaProblem(1, 0, 1, 0, 1), acts.relu, tol=0.0)


def test_bisection_zero_b():
    assert sv.solve_alpha_bisection(AlphaProblem(0.0, 1.0, 1.0, 0.0, 1.0), acts.arctan).alpha == 0.0


def test_piecewise_rejects_bad_partition():
    bad = [acts.CubicPiece(-math.inf, 0.0, (0, 0, 0, 0)), acts.CubicPiece(0.5, math.inf, (0, 0, 1, 0))]
    with pytest.raises(InvalidProblem):
        sv.solve_alpha_piecewise_cubic(AlphaProblem(1, 0, 1, 0, 1), bad)


@given(problem)
def test_relu_as_pieces_matches_closed_form(p):
    a = sv.solve_alpha_relu(p)
    b = sv.solve_alpha_piecewise_cubic(p, acts.pieces(acts.relu))
    assert abs(a.alpha - b.alpha) <= 1e-10 * max(1.0, abs(a.alpha))


@pytest.mark.parametrize("name", list(ACTS))
def test_oracle_equivalence(name):
    act = ACTS[name]
    b, c, s, k = random_problems(2000, 11)
    got = sv.alpha_core(act, b, c, s, k)
    ref = sv.bisection_core(act, b, c, s, k)
    jg = sv.objective_core(act, b, c, s, k, got)
    jr = sv.objective_core(act, b, c, s, k, ref)
    assert np.all(jg <= jr + 1e-8)
    if name == "relu":
        assert np.max(np.abs(got - ref)) <= 1e-6


@pytest.mark.parametrize("name", list(ACTS))
@given(p=problem)
def test_never_worse_than_zero(name, p):
    sol = sv.solve_alpha(p, ACTS[name])
    assert math.isfinite(sol.alpha)
    assert sol.objective <= sv.objective(p, ACTS[name], 0.0) + 1e-12


@given(p=problem)
def test_solution_objective_matches_reference(p):
    sol = sv.solve_alpha(p, acts.smoothstep)
    ref = step_objective("smoothstep", p.b, p.theta_dot_z, p.eta, p.mu, p.z_norm_sq, sol.alpha)
    assert sol.objective == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_arctan_solution_is_stationary():
    b, c, s, k = random_problems(10_000, 5)
    alpha = sv.arctan_core(b, c, s, k)
    x = c - alpha * s
    dj = -b * s / (1.0 + x * x) + s * k * alpha
    assert np.max(np.abs(dj)) <= 1e-9


# On the hinge branch alpha moves at rate 1/(eta |z|^2) in theta^T z, so a
# +-1e-9 probe stays below 1e-6 only when eta |z|^2 >= 2e-3.
@given(
    b=st.floats(0.01, 10),
    eta=st.floats(0.05, 10),
    mu=st.one_of(st.just(0.0), st.floats(1e-4, 1)),
    zsq=st.floats(0.05, 100),
)
def test_relu_alpha_continuous_across_case_boundaries(b, eta, mu, zsq):
    kappa = 1.0 + eta * mu
    s = eta * zsq
    for boundary in (0.0, s * b):  # in terms of theta^T z
        lo = sv.relu_core(b, (boundary - 1e-9) / kappa, s, kappa)
        hi = sv.relu_core(b, (boundary + 1e-9) / kappa, s, kappa)
        assert abs(lo - hi) <= 1e-6


@pytest.mark.parametrize("name", ["arctan", "smoothstep", "relu"])
def test_node_update_recovers_eb_step(name):
    act = ACTS[name]
    rng = np.random.default_rng(4)
    etas = np.array([1e-1, 1e-2, 1e-3, 1e-4])
    for _ in range(10):
        theta = rng.normal(size=5)
        z = rng.normal(size=5) * 0.5
        assume_ok = abs(theta @ z) > 0.1
        if not assume_ok:
            continue
        b = rng.normal()
        mu = 0.1
        errs = []
        for eta in etas:
            p = AlphaProblem(b, theta @ z, eta, mu, z @ z)
            ib = sv.node_update(theta, z, sv.solve_alpha(p, act).alpha, eta, mu)
            eb = theta * (1 - eta * mu) - eta * act.slope(theta @ z) * b * z
            errs.append(np.linalg.norm(ib - eb))
        slope = np.polyfit(np.log(etas), np.log(errs), 1)[0]
        assert 1.8 <= slope <= 2.2


# --- updates ---------------------------------------------------------------


def test_node_update_examples():
    th = np.array([1.0, 1.0])
    assert np.array_equal(sv.node_update(th, [3.0, 4.0], 0.0, 0.7, 0.0), th)
    assert np.array_equal(sv.node_update(th, [1.0, 0.0], 0.5, 1.0, 0.0), [0.5, 1.0])
    assert np.array_equal(sv.node_update([4.0, -2.0], [1.0, 1.0], 0.0, 1.0, 1.0), [2.0, -1.0])
    with pytest.raises(DimensionError):
        sv.node_update(th, [1.0], 0.1, 1.0, 0.0)


def test_implicit_gradient_examples():
    th = np.array([0.3, -1.0, 2.0])
    assert np.array_equal(sv.implicit_gradient(th, th, 0.5), np.zeros(3))
    z = np.array([1.0, 2.0, -1.0])
    after = sv.node_update(th, z, 0.25, 2.0, 0.0)
    assert np.allclose(sv.implicit_gradient(th, after, 2.0), 0.25 * z, rtol=0, atol=1e-15)
    assert np.array_equal(sv.implicit_gradient_from_alpha(th, z, 0.25, 2.0, 0.0), 0.25 * z)
    with pytest.raises(InvalidProblem):
        sv.implicit_gradient(th, th, 0.0)


def test_stabilized_gradient_matches_eb_at_tiny_eta():
    rng = np.random.default_rng(8)
    theta = rng.normal(size=6)
    z = rng.normal(size=6)
    b, mu, eta = 0.8, 1e-3, 1e-10
    if theta @ z <= 0:
        theta = -theta
    p = AlphaProblem(b, theta @ z, eta, mu, z @ z)
    alpha = sv.solve_alpha_relu(p).alpha
    eb = mu * theta + b * z
    g = sv.implicit_gradient_from_alpha(theta, z, alpha, eta, mu)
    assert np.linalg.norm(g - eb) <= 1e-12 * np.linalg.norm(eb)


def test_infinite_lr_limit_examples():
    assert sv.infinite_lr_limit(1.0, 2.0, 0.3, acts.relu) == 0.0
    assert sv.infinite_lr_limit(-1.0, 1.0, 0.5, acts.relu) == pytest.approx(2.0, abs=1e-12)
    assert sv.infinite_lr_limit(0.0, 1.0, 0.5, acts.hardtanh) == 0.0
    with pytest.raises(DivergentLimit):
        sv.infinite_lr_limit(-1.0, 1.0, 0.0, acts.relu)
    with pytest.raises(DivergentLimit):
        sv.infinite_lr_limit(1.0, 1.0, 0.0, acts.arctan)


def test_infinite_lr_limit_against_grid():
    # beta minimises b*sigma(beta*zsq) + mu*zsq*beta^2/2
    for name, b, zsq, mu in [("hardtanh", -0.7, 2.0, 0.1), ("smoothstep", 1.3, 0.5, 0.05), ("relu", -0.3, 3.0, 0.2)]:
        betas = np.arange(-40, 40, 1e-4)
        vals = np.array([b * __import__("oracles").act_value(name, v * zsq) for v in betas]) + 0.5 * mu * zsq * betas**2
        assert sv.infinite_lr_limit(b, zsq, mu, ACTS[name]) == pytest.approx(betas[np.argmin(vals)], abs=2e-4)


@pytest.mark.parametrize("name", ["relu", "hardtanh", "smoothstep"])
@given(b=st.floats(-5, 5).filter(lambda v: abs(v) > 1e-3), tz=st.floats(-3, 3), zsq=st.floats(0.1, 10))
def test_bounded_step_and_limit(name, b, tz, zsq):
    act = ACTS[name]
    mu = 0.01
    theta = np.array([tz, 0.0])
    z = np.array([1.0, 0.0]) * math.sqrt(zsq)
    theta = theta / math.sqrt(zsq)  # so theta @ z == tz
    steps = []
    for eta in 10.0 ** np.arange(0, 7):
        p = AlphaProblem(b, theta @ z, eta, mu, z @ z)
        after = sv.node_update(theta, z, sv.solve_alpha(p, act).alpha, eta, mu)
        steps.append(np.linalg.norm(after - theta))
        assert np.isfinite(steps[-1])
    beta = sv.infinite_lr_limit(b, z @ z, mu, act)
    limit_row = beta * z
    assert np.linalg.norm(after - limit_row) <= 1e-3 * max(np.linalg.norm(limit_row), np.linalg.norm(theta), 1e-12)
