from fractions import Fraction as F
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sgain.errors import ConvergenceError, GridError, ModelError
from sgain.gain import (
    InputFunction,
    contraction_estimate,
    default_window,
    envelope,
    envelope_inputs,
    gain_apply,
    gain_fixed_point,
    gain_fixed_point_ensemble,
    k_operator,
    part_metric,
    part_metric_ensemble,
    sublinearity_check,
)
from sgain.linearflow import LinearSystem
from sgain.models import FeedbackSpec, ModelSpec, builtin
from sgain.sde import integrate_forward, pullback
from sgain.wiener import sample_ensemble, sample_grid, shift

positive = st.floats(min_value=1e-6, max_value=1e6, allow_nan=False)
vectors = st.lists(positive, min_size=3, max_size=3).map(np.array)


def diag_model(alpha, sigma, value=(0, 0)):
    d = len(alpha)
    A = [[-alpha[i] if i == j else 0 for j in range(d)] for i in range(d)]
    noise = [[sigma[k] if i == k else 0 for i in range(d)] for k in range(d)]
    return ModelSpec(LinearSystem(d, A, noise, "diagonal"), FeedbackSpec("constant", d, {"value": list(value)}))


# K and K^h

def test_k_of_zero_is_zero():
    m = builtin("goodwin")
    g = sample_grid(3, -5, 0, 1e-2, 1)
    assert np.all(k_operator(m, g, InputFunction.constant([0, 0, 0], 5.0, 1e-2)) == 0)


def test_k_scalar_deterministic():
    m = builtin("scalar")
    g = sample_grid(1, -10, 0, 1e-3, 1)
    c = 2.5
    y = k_operator(m, g, InputFunction.constant([c], 10.0, 1e-3))
    assert y[0] == pytest.approx(c * (1 - (1 - 1e-3) ** 10_000), rel=1e-12)
    assert y[0] == pytest.approx(c * (1 - math.exp(-10)), rel=1e-3)
    mid = k_operator(m, g, InputFunction.constant([c], 10.0, 1e-3), s_eval=-5.0)
    assert mid[0] == pytest.approx(c * (1 - math.exp(-5)), rel=1e-3)


def test_k_operator_errors():
    m = builtin("scalar")
    g = sample_grid(1, -2, 0, 1e-2, 1)
    u = InputFunction.constant([1.0], 2.0, 1e-2)
    with pytest.raises(ModelError):
        k_operator(m, g, u, s_eval=-3.0)
    with pytest.raises(ModelError):
        k_operator(m, g, u, s_eval=0.5)
    with pytest.raises(GridError):
        k_operator(m, sample_grid(1, -2, 0, 2e-2, 1), u)
    with pytest.raises(ModelError):
        InputFunction(2.0, 1e-2, np.ones((5, 1)))
    with pytest.raises(ModelError):
        InputFunction(2.0, 1e-2, -np.ones((201, 1)))


def test_k_matches_direct_quadrature():
    alpha, sigma = [1, F(1, 2)], [F(1, 2), F(1, 4)]
    m = diag_model(alpha, sigma)
    T, dt = 20.0, 1e-4
    g = sample_grid(2, -T, 0, dt, 7)
    sweep = k_operator(m, g, InputFunction.constant([1.0, 1.0], T, dt))
    # Phi_ii(-r, theta_r w) = exp(-(alpha_i + sigma_i^2/2)(-r) - sigma_i W_r)
    r = g.times
    rate = np.array([-(float(a) + float(s) ** 2 / 2) for a, s in zip(alpha, sigma)])
    logphi = rate[None, :] * (-r[:, None]) - g.values * np.array([float(s) for s in sigma])
    phi = np.exp(logphi)
    quad = 0.5 * dt * (phi[:-1] + phi[1:]).sum(axis=0)
    assert np.abs(sweep - quad).max() <= 1e-3


def test_gain_apply_constant_feedback():
    m = diag_model([1, 1], [1, 1], value=(F(3, 2), 2))
    g = sample_grid(2, -3, 0, 1e-2, 2)
    u = InputFunction(3.0, 1e-2, np.random.default_rng(0).uniform(0, 5, (301, 2)))
    out = gain_apply(m, g, u)
    assert np.all(out.values == np.array([1.5, 2.0]))


@pytest.mark.parametrize("name", ["goodwin", "example45", "example46", "example47"])
def test_gain_apply_range(name):
    m = builtin(name)
    g = sample_grid(m.linear.n_noise, -5, 0, 1e-2, 3)
    gamma = np.array([float(v) for v in m.feedback.gamma])
    u = InputFunction(5.0, 1e-2, np.random.default_rng(1).uniform(0, 1, (501, m.dim)) * gamma)
    out = gain_apply(m, g, u).values
    assert np.all(out <= gamma + 1e-12)
    assert np.all(out >= np.array([float(v) for v in m.feedback.delta]) - 1e-12)


# fixed point

def test_constant_feedback_converges_in_one_iteration():
    m = builtin("scalar", c=3, sigma=F(1, 2))
    g = sample_grid(1, -10, 0, 1e-3, 4)
    est = gain_fixed_point(m, g, 10.0)
    assert est.iterations == 1 and est.converged
    np.testing.assert_array_equal(est.value_at_zero, k_operator(m, g, InputFunction.constant([3.0], 10.0, 1e-3)))


def test_goodwin_fixed_point_matches_pullback():
    m = builtin("goodwin", V=F(1, 2))
    g = sample_grid(3, -30, 0, 1e-3, 5)
    est = gain_fixed_point(m, g, 30.0, tol=1e-9)
    for x0 in ([0, 0, 0], [10, 10, 10]):
        assert np.abs(pullback(m, g, x0, 30.0) - est.value_at_zero).max() <= 1e-3
    hist = est.residual_history
    assert all(b <= 1.1 * a for a, b in zip(hist[1:], hist[2:]))
    assert np.abs(gain_apply(m, g, est.input).values - est.input.values).max() <= 2 * 1e-9


def test_non_convergence_reports_history():
    m = builtin("goodwin", V=F(1, 2))
    g = sample_grid(3, -5, 0, 1e-2, 5)
    with pytest.raises(ConvergenceError) as info:
        gain_fixed_point(m, g, 5.0, tol=1e-14, max_iter=2)
    est = info.value.estimate
    assert not est.converged and len(est.residual_history) == 3
    with pytest.raises(ModelError):
        gain_fixed_point(m, g, 5.0, tol=0)
    with pytest.raises(ModelError):
        gain_fixed_point(m, g, 0.0)


def test_ensemble_matches_single_paths():
    m = builtin("othmer_tyson", k0=F(1, 2))
    grids = sample_ensemble(3, -10, 0, 1e-2, 6, 3)
    ens = gain_fixed_point_ensemble(m, grids, 10.0, tol=1e-10)
    for g, e in zip(grids, ens.per_path):
        single = gain_fixed_point(m, g, 10.0, tol=1e-10)
        np.testing.assert_allclose(e.value_at_zero, single.value_at_zero, rtol=1e-12)
        assert e.iterations == single.iterations
    assert ens.iterations == max(e.iterations for e in ens.per_path)


def test_type2_equilibrium_strongly_positive():
    m = builtin("example45")
    est = gain_fixed_point_ensemble(m, sample_ensemble(3, -10, 0, 1e-3, 7, 4), 10.0, tol=1e-8)
    assert est.converged
    for e in est.per_path:
        assert np.all(e.value_at_zero > 0)


@pytest.mark.parametrize("name,kw", [("goodwin", {"V": F(1, 2)}), ("example45", {})])
def test_equilibrium_moves_with_the_flow(name, kw):
    m = builtin(name, **kw)
    T, dt = 20.0, 1e-3
    g = sample_grid(m.linear.n_noise, -T, 1.0, dt, 8)
    v = gain_fixed_point(m, g, T, tol=1e-10).value_at_zero
    for s in (0.5, 1.0):
        forward = integrate_forward(m, g, v, 0.0, s).states[-1]
        later = gain_fixed_point(m, shift(g, s), T, tol=1e-10).value_at_zero
        assert np.abs(forward - later).max() <= 1e-2


def test_default_window():
    T = default_window(0.5, 1.0, 1e-6)
    assert math.exp(-0.5 * T) * 1.0 == pytest.approx(1e-7)
    with pytest.raises(ModelError):
        default_window(0.0, 1.0, 1e-6)


# envelopes

def test_envelope_constant_and_order():
    m = diag_model([1, 1], [1, 1], value=(1, 2))
    env = envelope(m, sample_grid(2, -5, 0, 1e-2, 1), [1, 1], 1.0, 5.0)
    np.testing.assert_array_equal(env.xi, [1, 2])
    np.testing.assert_array_equal(env.eta, [1, 2])
    g = builtin("goodwin", V=F(1, 2))
    env = envelope(g, sample_grid(3, -5, 0, 1e-2, 1), [[0, 0, 0], [5, 5, 5]], 0.5, 5.0)
    assert np.all(env.xi <= env.eta)
    with pytest.raises(ModelError):
        envelope(g, sample_grid(3, -5, 0, 1e-2, 1), [0, 0, 0], 5.0, 1.0)


@pytest.mark.parametrize("name,kw", [("goodwin", {"V": F(1, 2)}), ("othmer_tyson", {"k0": F(1, 2)}),
                                     ("example46", {})])
def test_sandwich(name, kw):
    m = builtin(name, **kw)
    W = 20.0
    g = sample_grid(m.linear.n_noise, -40, 0, 1e-2, 3)
    x0 = np.stack([np.zeros(m.dim), np.full(m.dim, 10.0)])
    xi, eta = envelope_inputs(m, g, x0, 1.0, 30.0, W)
    assert np.all(xi.values <= eta.values)
    ustar = gain_fixed_point(m, g, W, tol=1e-12).input.values
    late = slice(ustar.shape[0] // 2, None)  # away from the truncation edge
    a, b = xi, eta
    for _ in range(10):
        a = gain_apply(m, g, gain_apply(m, g, a))
        b = gain_apply(m, g, gain_apply(m, g, b))
        assert np.all(a.values <= b.values + 1e-8)
        assert np.all(a.values[late] <= ustar[late] + 1e-6)
        assert np.all(ustar[late] <= b.values[late] + 1e-6)
    assert np.abs(a.values - b.values)[late].max() < 1e-6


# part metric

def test_part_metric_examples():
    assert part_metric([1, 1], [math.e, math.e]) == pytest.approx(1.0)
    assert part_metric([2, 3], [2, 3]) == 0.0
    with pytest.raises(ModelError):
        part_metric([1, 0], [1, 1])
    with pytest.raises(ModelError):
        part_metric([1, 1], [1, 1, 1])


@given(vectors, vectors, st.floats(min_value=1e-3, max_value=1e3))
def test_part_metric_symmetry_and_scale(x, y, a):
    assert part_metric(x, y) == part_metric(y, x)
    assert part_metric(a * x, a * y) == pytest.approx(part_metric(x, y), abs=1e-9)
    assert part_metric(x, y) >= 0


@given(vectors, vectors, vectors)
def test_part_metric_triangle(x, y, z):
    assert part_metric(x, z) <= part_metric(x, y) + part_metric(y, z) + 1e-12


@given(vectors, vectors)
def test_part_metric_is_the_infimum(x, y):
    c = math.exp(part_metric(x, y))
    assert np.all(x / c <= y * (1 + 1e-12)) and np.all(y <= c * x * (1 + 1e-12))


def test_part_metric_ensemble():
    rng = np.random.default_rng(0)
    u = list(rng.uniform(0.1, 2, (5, 3)))
    v = list(rng.uniform(0.1, 2, (5, 3)))
    assert part_metric_ensemble(u, u) == 0.0
    assert part_metric_ensemble(u[:1], v[:1]) == part_metric(u[0], v[0])
    assert part_metric_ensemble(u[:3], v[:3]) <= part_metric_ensemble(u, v)
    with pytest.raises(ModelError):
        part_metric_ensemble(u, v[:2])


# sublinearity

@pytest.mark.parametrize("name", ["example45", "example46", "example47"])
def test_worked_examples_are_sublinear(name):
    rep = sublinearity_check(builtin(name).feedback)
    assert rep.passed, rep


def test_linear_map_is_sublinear_with_equality():
    spec = FeedbackSpec("custom_expression", 2, {"expressions": ["x1", "x2"], "monotonicity": "monotone"})
    rep = sublinearity_check(spec, "none")
    assert rep.passed and rep.worst_violation == 0.0


def test_square_is_not_sublinear():
    spec = FeedbackSpec("custom_expression", 1, {"expressions": ["x1^2"], "monotonicity": "monotone"})
    assert not sublinearity_check(spec, "none").passed
    at_one = sublinearity_check(spec, "none", {"lo": 1.0, "hi": 1.0, "per_axis": 1, "lambdas": [0.5]})
    assert not at_one.passed
    assert at_one.worst_lambda == 0.5 and at_one.worst_x.tolist() == [1.0]
    assert at_one.worst_violation == pytest.approx(0.25)


def test_subtract_mode_needs_positive_delta():
    with pytest.raises(ModelError):
        sublinearity_check(builtin("goodwin").feedback, "subtract_delta_over_T", shift_value=2)


# contraction

def test_contraction_constant_feedback_is_zero():
    m = diag_model([1, 1], [F(1, 2), F(1, 2)], value=(1, 2))
    u, v = np.full((401, 2), 0.5), np.full((401, 2), 3.0)
    rep = contraction_estimate(m, sample_ensemble(2, -4, 0, 1e-2, 1, 3), pairs=[(u, v), (v, u)], T=4.0)
    assert rep.max_ratio == 0.0 and rep.skipped == 0 and rep.ratios.size == 2


def test_contraction_skips_identical_pairs():
    m = builtin("example45")
    grids = sample_ensemble(3, -4, 0, 1e-2, 1, 2)
    n = 401
    u = np.full((n, 3), 2.5)
    v = np.full((n, 3), 2.8)
    rep = contraction_estimate(m, grids, pairs=[(u, u), (u, v), (v, v)], T=4.0)
    assert rep.skipped == 2 and rep.ratios.size == 1
    assert rep.max_ratio < 1


def test_example45_contracts_small_ensemble():
    m = builtin("example45")
    rep = contraction_estimate(m, sample_ensemble(3, -10, 0, 1e-2, 2, 10), pairs=10, T=10.0, seed=3)
    assert rep.max_ratio < 1 and rep.skipped == 0
