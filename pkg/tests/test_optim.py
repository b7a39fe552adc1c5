import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lovasz_jaccard.losses import jaccard_grad, jaccard_set_function, lovasz_hinge
from lovasz_jaccard.optim import (
    LRSchedule,
    OptimizerState,
    ProxConfig,
    ProxNotConverged,
    _polymatroid_vertex,
    _prox_objective,
    in_jaccard_polymatroid,
    momentum_step,
    poly_lr,
    prox_gradient_step,
    prox_hinge_direction,
    prox_lovasz_hinge,
    project_jaccard_polymatroid,
    prox_max_affine,
    toy_piecewise_objective,
    toy_prox,
    toy_trajectory,
)

from oracles import all_subsets, prox_dense_grid


# -- schedule and momentum -----------------------------------------------------------


def test_poly_lr_examples():
    sched = LRSchedule(0.1, 1000)
    assert poly_lr(sched, 0) == 0.1
    assert poly_lr(sched, 1000) == 0.0
    assert poly_lr(sched, 500) == pytest.approx(0.1 * 0.5**0.9)
    assert poly_lr(sched, 500) == pytest.approx(0.053589, abs=1e-6)
    assert sched(500) == poly_lr(sched, 500)


def test_poly_lr_validation():
    with pytest.raises(ValueError):
        poly_lr(LRSchedule(0.1, 10), 11)
    with pytest.raises(ValueError):
        poly_lr(LRSchedule(0.1, 10), -1)
    with pytest.raises(ValueError):
        LRSchedule(0.0, 10)
    with pytest.raises(ValueError):
        LRSchedule(0.1, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 1000), st.floats(0.1, 3.0))
def test_poly_lr_positive_and_decreasing(max_iter, power):
    sched = LRSchedule(1.0, max_iter, power)
    lrs = [poly_lr(sched, k) for k in range(max_iter + 1)]
    assert all(lr > 0 for lr in lrs[:-1]) and lrs[-1] == 0.0
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_momentum_alpha_zero_is_gradient_descent():
    g = np.array([1.0, -2.0])
    delta, _ = momentum_step(OptimizerState.zeros_like(g), g, 0.1, 0.0)
    np.testing.assert_array_equal(delta, -0.1 * g)


def test_momentum_unrolled_two_steps():
    g = np.array([2.0, 1.0])
    state = OptimizerState.zeros_like(g)
    _, state = momentum_step(state, g, 1.0, 0.5)
    np.testing.assert_array_equal(state.velocity, g)
    _, state = momentum_step(state, g, 1.0, 0.5)
    np.testing.assert_array_equal(state.velocity, 1.5 * g)
    assert state.step_count == 2


def test_momentum_coasts_geometrically_without_gradient():
    state = OptimizerState(np.array([1.0]))
    steps = []
    for _ in range(5):
        delta, state = momentum_step(state, np.zeros(1), 1.0, 0.5)
        steps.append(delta[0])
    np.testing.assert_allclose(np.array(steps[1:]) / np.array(steps[:-1]), 0.5)


def test_momentum_shape_mismatch():
    with pytest.raises(ValueError):
        momentum_step(OptimizerState.zeros_like(np.zeros(2)), np.zeros(3), 0.1, 0.9)


# -- prox of the Lovász hinge ------------------------------------------------------------


def test_prox_inside_a_piece_is_a_gradient_step():
    r0 = np.array([0.4, 0.1])
    np.testing.assert_allclose(prox_lovasz_hinge(r0, [1, 1], ProxConfig(10.0)), [0.35, 0.05])
    np.testing.assert_allclose(prox_dense_grid(r0, [True, True], 10.0), [0.35, 0.05], atol=1e-4)


def test_prox_large_lambda_stays_put():
    r0 = np.array([0.8, 0.3, -0.2, 0.5])
    out = prox_lovasz_hinge(r0, [1, 0, 1, 0], ProxConfig(1e9))
    np.testing.assert_allclose(out, r0, atol=1e-8)


def test_prox_leaves_flat_region_alone():
    r0 = np.array([-0.5, -0.1])
    np.testing.assert_array_equal(prox_lovasz_hinge(r0, [1, 0], ProxConfig(0.5)), r0)


def test_prox_small_lambda_reaches_zero():
    out = prox_lovasz_hinge([0.3, 0.2, 0.1], [1, 0, 1], ProxConfig(0.01))
    np.testing.assert_array_equal(out, [0.0, 0.0, 0.0])


def test_prox_matches_dense_grid_small_p():
    rng = np.random.default_rng(11)
    for _ in range(40):
        p = int(rng.integers(1, 4))
        r0 = rng.uniform(-0.5, 1.5, p)
        fg = rng.random(p) < 0.5
        lam = float(rng.uniform(0.5, 10.0))
        got = prox_lovasz_hinge(r0, fg, ProxConfig(lam))
        np.testing.assert_allclose(got, prox_dense_grid(r0, fg, lam), atol=1e-3)


def test_prox_falls_back_when_margins_must_cross():
    # the true prox puts a foreground margin below a background one, which
    # the order-preserving path cannot reach; the certificate catches it
    r0 = np.array([0.70932355, 0.73790966, 0.8019487])
    fg = np.array([0, 1, 1])
    lam = 5.335
    res = prox_lovasz_hinge(r0, fg, ProxConfig(lam), return_path=True)
    assert res.method == "min_norm_point"
    best = prox_dense_grid(r0, fg, lam)
    np.testing.assert_allclose(res.point, best, atol=1e-4)
    assert res.point[1] < res.point[0]
    path_end = res.path[-2]
    assert _prox_objective(res.point, r0, fg, lam) < _prox_objective(path_end, r0, fg, lam)


def test_polymatroid_membership_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(200):
        p = int(rng.integers(1, 7))
        fg = rng.random(p) < 0.5
        s = rng.uniform(-0.05, 0.6, p)
        setfn = jaccard_set_function(fg)
        brute = np.all(s >= 0) and all(s[A].sum() <= setfn(A) + 1e-12 for A in all_subsets(p))
        assert in_jaccard_polymatroid(s, fg, tol=1e-12) == brute


def test_projection_is_a_projection():
    rng = np.random.default_rng(6)
    for _ in range(50):
        p = int(rng.integers(1, 6))
        fg = rng.random(p) < 0.5
        z = rng.uniform(-1, 2, p)
        s = project_jaccard_polymatroid(z, fg)
        assert in_jaccard_polymatroid(s, fg, tol=1e-9)
        # no vertex of the set improves on s: (z - s) . (v - s) <= 0
        for A in all_subsets(p):
            v = _polymatroid_vertex(np.where(A, 1.0 + rng.random(p), -1.0), fg)
            assert (z - s) @ (v - s) <= 1e-9


def test_prox_is_certified_at_larger_p():
    rng = np.random.default_rng(8)
    for _ in range(10):
        p = int(rng.integers(50, 300))
        r0 = rng.uniform(-1, 2, p)
        fg = rng.random(p) < 0.5
        lam = float(rng.uniform(0.1, 20))
        u = prox_lovasz_hinge(r0, fg, ProxConfig(lam))
        s = lam * (r0 - u)
        assert in_jaccard_polymatroid(s, fg, tol=1e-8)
        assert s @ u >= jaccard_grad(np.maximum(u, 0.0), fg).value - 1e-8


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_prox_never_worse_than_start(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(1, 30))
    r0 = rng.uniform(-1, 2, p)
    fg = rng.random(p) < 0.5
    lam = float(rng.uniform(0.1, 20))
    out = prox_lovasz_hinge(r0, fg, ProxConfig(lam))
    assert _prox_objective(out, r0, fg, lam) <= _prox_objective(r0, r0, fg, lam) + 1e-12
    # coordinates only move down, never below zero unless they started there
    assert np.all(out <= r0 + 1e-12)
    assert np.all((out >= -1e-12) | (out == r0))


def test_prox_path_objective_is_nonincreasing():
    rng = np.random.default_rng(4)
    for _ in range(30):
        p = int(rng.integers(2, 20))
        r0 = rng.uniform(0, 1, p)
        fg = rng.random(p) < 0.5
        lam = float(rng.uniform(0.5, 5))
        res = prox_lovasz_hinge(r0, fg, ProxConfig(lam), return_path=True)
        vertices = res.path if res.method == "path" else res.path[:-1]
        ext = [jaccard_grad(np.maximum(u, 0), fg).value for u in vertices]
        assert all(a >= b - 1e-12 for a, b in zip(ext, ext[1:]))
        assert res.n_edges <= 2 * p + 1


def test_prox_raises_with_partial_iterate():
    r0 = np.linspace(1.0, 0.1, 8)
    fg = np.array([1, 0] * 4)
    with pytest.raises(ProxNotConverged) as info:
        prox_lovasz_hinge(r0, fg, ProxConfig(0.05, max_pieces=1))
    assert info.value.iterate.shape == (8,)
    assert np.all(info.value.iterate <= r0)


def test_prox_config_validation():
    with pytest.raises(ValueError):
        ProxConfig(0.0)
    with pytest.raises(ValueError):
        ProxConfig(1.0, tol=0.0)
    with pytest.raises(ValueError):
        ProxConfig(1.0, certificate_tol=-1.0)


def test_prox_direction_equals_gradient_inside_piece():
    F = np.array([0.2, -0.4, 0.7])
    y = np.array([1.0, -1.0, 1.0])
    value, dF = prox_hinge_direction(F, y, ProxConfig(1e6))
    ref = lovasz_hinge(F, y)
    assert value == pytest.approx(ref.value)
    np.testing.assert_allclose(dF, ref.grad, atol=1e-9)


def test_prox_gradient_step_decreases_loss():
    rng = np.random.default_rng(0)
    design = np.column_stack([rng.normal(size=40), np.ones(40)])
    y = np.where(design[:, 0] + 0.3 * rng.normal(size=40) > 0, 1.0, -1.0)
    theta = np.zeros(2)
    before = lovasz_hinge(design @ theta, y).value
    theta = prox_gradient_step(theta, design, y, 0.01, ProxConfig(5.0))
    assert lovasz_hinge(design @ theta, y).value < before


# -- toy piecewise-linear problem ---------------------------------------------------------


@pytest.mark.parametrize(
    "x, nu, value, grad",
    [((-1, -1), 1.3, 0.0, (0, 0)), ((1, 0), 0.7, 0.7, (0.7, 0)), ((1, 1), 1.3, 1.3, (1.3, 0))],
)
def test_toy_objective_examples(x, nu, value, grad):
    v, g = toy_piecewise_objective(x, nu)
    assert v == pytest.approx(value)
    np.testing.assert_allclose(g, grad)


def test_toy_objective_rejects_bad_nu():
    with pytest.raises(ValueError):
        toy_piecewise_objective((0, 0), 0.0)


def test_max_affine_prox_against_grid():
    rng = np.random.default_rng(1)
    A = np.array([[0.0, 0.0], [1.3, 0.0], [0.0, 1.0]])
    for _ in range(30):
        x0 = rng.uniform(-1, 2, 2)
        lam = float(rng.uniform(1, 20))
        got = prox_max_affine(x0, A, np.zeros(3), lam)
        axes = [np.linspace(c - 2 / lam, c + 2 / lam, 801) for c in x0]
        U = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 2)
        obj = np.max(U @ A.T, axis=1) + 0.5 * lam * np.sum((U - x0) ** 2, axis=1)
        np.testing.assert_allclose(got, U[np.argmin(obj)], atol=2 * (4 / lam) / 800)


def test_first_toy_step_matches_gradient_descent():
    x0 = (1.0, 1.5)
    gd = toy_trajectory("gd", x0, 1.3, 0.1, steps=1)
    prox = toy_trajectory("prox", x0, 1.3, 0.1, steps=1)
    np.testing.assert_allclose(prox, gd, atol=1e-12)


def test_toy_prox_trajectory_monotone():
    traj = toy_trajectory("prox", (1.0, 1.5), 1.3, 0.1, steps=60)
    assert np.all(np.diff(traj[:, 1]) <= 1e-12)


def test_toy_prox_follows_edge_in_symmetric_case():
    traj = toy_trajectory("prox", (1.0, 1.5), 1.0, 0.1, steps=40)
    x1, x2, obj = traj[:, 2], traj[:, 3], traj[:, 1]
    gap = np.abs(x2 - x1)
    contact = int(np.argmax(gap < 1e-9))
    assert contact > 0
    after = slice(contact, None)
    assert np.all((gap[after] < 1e-9) | (obj[after] == 0.0))


def test_toy_gd_and_momentum_leave_the_edge():
    # after reaching the edge, plain steps keep hopping across it
    for method in ("gd", "momentum"):
        traj = toy_trajectory(method, (1.0, 1.5), 1.3, 0.1, steps=40)
        gap = np.abs(traj[:, 3] - 1.3 * traj[:, 2])
        active = traj[:, 1] > 0
        assert np.any(gap[active][2:] > 1e-3), method


def test_toy_momentum_objective_never_increases_here():
    # all piece gradients are componentwise >= 0, so momentum with v0 = 0
    # only moves each coordinate down and the monotone objective cannot rise
    for nu in (0.5, 1.0, 1.3, 2.0):
        traj = toy_trajectory("momentum", (1.0, 1.5), nu, 0.1, alpha=0.9, steps=80)
        assert np.all(np.diff(traj[:, 1]) <= 1e-12)
        assert np.all(np.diff(traj[:, 2]) <= 0) and np.all(np.diff(traj[:, 3]) <= 0)


def test_toy_trajectory_shape_and_errors():
    assert toy_trajectory("gd", (1, 1), 1.3, 0.1, steps=0).shape == (1, 4)
    with pytest.raises(ValueError):
        toy_trajectory("adam", (1, 1), 1.3, 0.1)


def test_toy_prox_is_exact_on_kink():
    # from the edge, the prox moves along it: stationarity with mixed gradient
    out = toy_prox(np.array([1.0, 1.3]), 1.3, 10.0)
    assert out[1] == pytest.approx(1.3 * out[0], abs=1e-10)
    assert out[0] < 1.0
