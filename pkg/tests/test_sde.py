from fractions import Fraction as F
import math

import numpy as np
import pytest

from sgain import _stepper
from sgain.errors import ModelError, PositivityError
from sgain.linearflow import LinearSystem, phi_exact_diagonal, phi_numeric
from sgain.models import BUILTIN_NAMES, FeedbackSpec, ModelSpec, builtin
from sgain.sde import (
    integrate_ensemble,
    integrate_forward,
    pullback,
    pullback_convergence,
    pullback_family,
)
from sgain.wiener import sample_ensemble, sample_grid, shift


def linear_model(alpha, sigma):
    d = len(alpha)
    A = [[-alpha[i] if i == j else 0 for j in range(d)] for i in range(d)]
    noise = [[sigma[k] if i == k else 0 for i in range(d)] for k in range(d)]
    fb = FeedbackSpec("constant", d, {"value": [0] * d})
    return ModelSpec(LinearSystem(d, A, noise, "diagonal"), fb, "linear")


def test_zero_feedback_matches_closed_form():
    m = linear_model([1, F(1, 2)], [F(1, 2), F(1, 3)])
    x0 = np.array([1.0, 2.0])
    for g in sample_ensemble(2, 0, 1, 1e-4, 3, 4):
        traj = integrate_forward(m, g, x0, 0.0, 1.0)
        exact = phi_exact_diagonal(m.linear, g, 1.0).entries @ x0
        assert np.abs(traj.states[-1] - exact).max() <= 1e-2
        assert traj.times[0] == 0.0 and traj.times[-1] == pytest.approx(1.0)


def test_zero_state_stays_zero():
    m = linear_model([1, 1], [1, 1])
    traj = integrate_forward(m, sample_grid(2, 0, 2, 1e-3, 1), [0.0, 0.0], 0.0, 2.0)
    assert np.all(traj.states == 0)


def test_input_validation():
    m = builtin("goodwin")
    g = sample_grid(3, 0, 1, 1e-2, 1)
    with pytest.raises(ModelError):
        integrate_forward(m, g, [1, -1, 0], 0.0, 1.0)
    with pytest.raises(ModelError):
        integrate_forward(m, g, [1, 1], 0.0, 1.0)
    with pytest.raises(ModelError):
        integrate_forward(m, g, [1, 1, 1], 1.0, 0.0)
    with pytest.raises(ModelError):
        integrate_forward(m, sample_grid(2, 0, 1, 1e-2, 1), [1, 1, 1], 0.0, 1.0)


def test_window_extends_lazily():
    m = builtin("goodwin")
    g = sample_grid(3, 0, 1, 1e-2, 1)
    a = integrate_forward(m, g, [1, 1, 1], -2.0, 3.0)
    b = integrate_forward(m, sample_grid(3, -2, 3, 1e-2, 1), [1, 1, 1], -2.0, 3.0)
    np.testing.assert_array_equal(a.states, b.states)


def test_pullback_trivial_cases():
    m = builtin("goodwin")
    g = sample_grid(3, -1, 0, 1e-2, 2)
    np.testing.assert_array_equal(pullback(m, g, [1, 2, 3], 0.0), [1, 2, 3])
    scalar = linear_model([1], [0])
    out = pullback(scalar, sample_grid(1, -3, 0, 1e-3, 1), [2.0], 3.0)
    assert out[0] == pytest.approx(2 * (1 - 1e-3) ** 3000, rel=1e-12)
    assert out[0] == pytest.approx(2 * math.exp(-3), rel=2e-3)


def test_pullback_family_matches_individual_runs():
    m = builtin("goodwin", V=F(1, 10))
    g = sample_grid(3, -3, 0, 1e-2, 4)
    fam = pullback_family(m, g, [[1, 1, 1], [0, 2, 0]], [1.0, 3.0])
    for i, T in enumerate([1.0, 3.0]):
        for r, x0 in enumerate([[1, 1, 1], [0, 2, 0]]):
            np.testing.assert_allclose(fam[i, r], pullback(m, g, x0, T), rtol=1e-13, atol=1e-15)


def test_convergence_table_single_state():
    m = builtin("goodwin")
    tab = pullback_convergence(m, sample_grid(3, -5, 0, 1e-2, 1), [[1, 1, 1]], [1.0, 5.0])
    assert tab.pairs == () and tab.distances.shape == (2, 0)
    with pytest.raises(ModelError):
        pullback_convergence(m, sample_grid(3, -5, 0, 1e-2, 1), [[1, 1, 1]], [5.0, 1.0])


def test_convergence_linear_oracle():
    m = linear_model([1, 2], [F(1, 2), F(1, 2)])
    g = sample_grid(2, -8, 0, 1e-3, 6)
    x, y = np.array([1.0, 3.0]), np.array([4.0, 0.5])
    tab = pullback_convergence(m, g, [x, y], [2.0, 4.0, 8.0])
    for i, T in enumerate(tab.T_list):
        phi = phi_numeric(m.linear, shift(g, -T), T).entries
        assert tab.distances[i, 0] == pytest.approx(np.abs(phi @ (x - y)).max(), rel=1e-9)
    assert tab.decay_rate == pytest.approx(1.0, abs=0.5)


def test_goodwin_pullbacks_converge():
    m = builtin("goodwin")
    g = sample_grid(3, -30, 0, 1e-3, 42)
    tab = pullback_convergence(m, g, [[0, 0, 0], [10, 10, 10], [1, 5, 0.1]], [5.0, 10.0, 20.0, 30.0])
    worst = tab.distances.max(axis=1)
    assert worst[-1] < worst[0]
    assert worst[-1] < 1e-4
    assert tab.decreasing_fraction == 1.0


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_forward_invariance_and_boundedness(name):
    m = builtin(name)
    grids = sample_ensemble(m.linear.n_noise, -50, 0, 1e-3, 11, 4)
    x0 = np.stack([np.zeros(m.dim), np.full(m.dim, 10.0)])
    _, states = integrate_ensemble(m, grids, x0, -50.0, 0.0, record=True)
    assert states.min() >= 0.0
    assert np.all(np.isfinite(states)) and states.max() < 1e6


@pytest.mark.parametrize("name", ["goodwin", "othmer_tyson", "example45", "example46", "example47"])
def test_nonlinear_cocycle(name):
    m = builtin(name)
    x0 = np.ones(m.dim)
    for g in sample_ensemble(m.linear.n_noise, 0, 1, 1e-4, 12, 2):
        direct = integrate_forward(m, g, x0, 0.0, 1.0).states[-1]
        half = integrate_forward(m, g, x0, 0.0, 0.5).states[-1]
        shifted = integrate_forward(m, shift(g, 0.5), half, 0.0, 0.5).states[-1]
        assert np.abs(direct - shifted).max() <= 5e-2


def test_order_preservation_othmer_tyson():
    m = builtin("othmer_tyson", k0=F(1, 2))
    x = np.array([0.5, 1.0, 0.0])
    y = x + np.array([1.0, 0.5, 2.0])
    for g in sample_ensemble(3, 0, 5, 1e-3, 13, 4):
        _, st = integrate_ensemble(m, [g], np.stack([x, y]), 0.0, 5.0)
        assert np.all(st[0, 0] <= st[1, 0] + 1e-8)


def test_stepper_halving_rescues_large_step():
    A = np.array([[-1.0]])
    G = np.array([[1.0]])
    dW = np.array([[[-1.5]]])  # one EM step gives x(1 - 1.5 - dt) < 0
    fine = lambda n, k, lv: np.full((2**lv, 1), -1.5 / 2**lv)  # noqa: E731
    x = _stepper.run(np.ones((1, 1, 1)), A, G, dW, 1e-3, fine=fine)
    assert x.min() >= 0
    with pytest.raises(PositivityError):
        _stepper.run(np.ones((1, 1, 1)), A, G, dW, 1e-3)
    stubborn = lambda n, k, lv: np.full((2**lv, 1), -1.5)  # noqa: E731
    with pytest.raises(PositivityError, match="halvings"):
        _stepper.run(np.ones((1, 1, 1)), A, G, dW, 1e-3, fine=stubborn)


def test_small_negatives_are_clamped():
    A = np.array([[-1.0]])
    G = np.array([[1.0]])
    dW = np.array([[[-1.0 + 1e-3 - 1e-14]]])
    x = _stepper.run(np.ones((1, 1, 1)), A, G, dW, 1e-3)
    assert x[0, 0, 0] == 0.0
