import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from sapso import (AttractorModel, ContractError, GpsoParams, MeanField, RandomSource,
                   SwarmVector, build_M, check_stability, equilibrium, integrate_ode,
                   interpolate_trace, jacobian_pbar, mean_field_rhs, run_gpso, step_gpso)

THETA0 = np.array([1.0, -0.5, 2.0, 0.3])


def sin_example(params):
    """Attractor means sin-shaped in the first block with unit Jacobian at 0."""
    n = params.n

    def means(theta):
        return np.sin(np.asarray(theta)[..., :n])

    def jac(theta):
        out = np.zeros((n, 2 * n))
        out[:, :n] = np.diag(np.cos(np.asarray(theta)[:n]))
        return out

    att = AttractorModel.closed_form(means, means)
    return att, MeanField.from_attractors(params, att, jac, jac)


def test_linear_rhs_is_drift(linear_params):
    model = MeanField.linear(linear_params)
    assert np.allclose(mean_field_rhs(THETA0, model), build_M(linear_params) @ THETA0,
                       rtol=0, atol=1e-15)


def test_rhs_matches_decomposition_at_mean_draws(linear_params):
    att, model = sin_example(linear_params)
    s = SwarmVector(THETA0, 2, 1)
    _, dec = step_gpso(s, linear_params, att, RandomSource(0, 2, 1, degenerate=True))
    assert np.array_equal(dec.fluctuation, np.zeros(4))
    assert np.allclose(dec.drift + dec.mean_attraction, mean_field_rhs(THETA0, model),
                       rtol=0, atol=1e-14)


def test_stationary_start_stays_put():
    p = GpsoParams(r=2, dim=1)
    star = equilibrium(p, [0.4, -1.0], [0.4, -1.0])
    ode = integrate_ode(star, MeanField.linear(p, [0.4, -1.0], [0.4, -1.0]), 2.0, 1e-2)
    assert np.max(np.abs(ode.states - star.theta)) < 1e-14


def test_rk4_matches_matrix_exponential(linear_params):
    m = build_M(linear_params)
    ode = integrate_ode(THETA0, MeanField.linear(linear_params), 1.0, 1e-3)
    exact = np.array([expm(m * t) @ THETA0 for t in ode.times[::100]])
    assert np.max(np.abs(ode.states[::100] - exact)) < 1e-8


def test_rk4_fourth_order(linear_params):
    m = build_M(linear_params)
    exact = expm(m) @ THETA0
    errs = [np.abs(integrate_ode(THETA0, MeanField.linear(linear_params), 1.0, h).states[-1]
                   - exact).max() for h in (0.1, 0.05)]
    assert 8 <= errs[0] / errs[1] <= 32


def test_rk4_self_convergence_nonlinear(linear_params):
    _, model = sin_example(linear_params)
    ends = [integrate_ode(THETA0, model, 1.0, h).states[-1] for h in (0.1, 0.05, 0.025)]
    ratio = np.abs(ends[0] - ends[1]).max() / np.abs(ends[1] - ends[2]).max()
    assert 8 <= ratio <= 32


def test_grid_ends_at_T():
    ode = integrate_ode(THETA0, MeanField.linear(GpsoParams(r=2, dim=1)), 1.0, 0.3)
    assert ode.times[-1] == 1.0 and len(ode) == 5
    with pytest.raises(ContractError):
        integrate_ode(THETA0, MeanField.linear(GpsoParams(r=2, dim=1)), 1.0, 0.0)


def test_piecewise_constant_interpolation(linear_params):
    theta0 = SwarmVector(THETA0, 2, 1)
    tr = run_gpso(theta0, linear_params, AttractorModel.constant([0.0, 0.0], [0.0, 0.0]),
                  None, 50, seed=0)
    eps = linear_params.epsilon
    assert np.array_equal(interpolate_trace(tr, eps, 0.0).theta, tr.states[0])
    for n in (1, 7, 30, 50):
        assert np.array_equal(interpolate_trace(tr, eps, eps * n).theta, tr.states[n])
        assert np.array_equal(interpolate_trace(tr, eps, eps * n + eps / 2).theta, tr.states[n])
    with pytest.raises(ContractError):
        interpolate_trace(tr, eps, eps * 51)
    with pytest.raises(ContractError):
        interpolate_trace(tr, eps, -0.001)


def test_equilibrium_examples():
    p1 = GpsoParams(r=1, dim=1)
    assert np.array_equal(equilibrium(p1, [2.0], [2.0]).theta, [0.0, 2.0])
    p = GpsoParams(r=1, dim=1, c1=1.0, c2=3.0)
    assert np.array_equal(equilibrium(p, [0.0], [4.0]).theta, [0.0, 3.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.floats(0.1, 3), st.floats(0.1, 3),
       st.integers(0, 2**31))
def test_equilibrium_zeroes_mean_field(r, dim, c1, c2, seed):
    g = np.random.default_rng(seed)
    p = GpsoParams(r=r, dim=dim, c1=c1, c2=c2)
    pr, pg = g.uniform(-10, 10, r * dim), g.uniform(-10, 10, r * dim)
    star = equilibrium(p, pr, pg)
    assert np.all(star.v == 0.0)
    assert np.max(np.abs(mean_field_rhs(star, MeanField.linear(p, pr, pg)))) < 1e-10


def test_linear_example_jacobian_vanishes(linear_params):
    model = MeanField.linear(linear_params)
    assert np.array_equal(jacobian_pbar(model, np.zeros(4)), np.zeros((4, 4)))


def test_sin_example_drift_matrix(linear_params):
    _, model = sin_example(linear_params)
    a = build_M(linear_params) + jacobian_pbar(model, np.zeros(4))
    expected = np.array([[1.229, 0, -1.5, 0], [0, 1.229, 0, -1.5],
                         [2.5, 0, -1.5, 0], [0, 2.5, 0, -1.5]])
    assert np.allclose(a, expected, rtol=0, atol=1e-15)


def test_finite_difference_jacobian_matches_analytic(linear_params):
    n = linear_params.n

    def pr_fn(theta):
        t = np.asarray(theta)
        return t[..., n:] ** 2 + 0.5 * t[..., :n]

    def pr_jac(theta):
        out = np.zeros((n, 2 * n))
        out[:, :n] = 0.5 * np.eye(n)
        out[:, n:] = np.diag(2 * theta[n:])
        return out

    att = AttractorModel.closed_form(pr_fn, pr_fn)
    analytic = MeanField.from_attractors(linear_params, att, pr_jac, pr_jac)
    numeric = MeanField.from_attractors(linear_params, att)
    pt = np.array([0.3, -0.2, 1.7, -2.4])
    assert np.max(np.abs(jacobian_pbar(analytic, pt) - jacobian_pbar(numeric, pt))) < 1e-6


@pytest.mark.parametrize("a,stable", [
    (-np.eye(3), True), (np.eye(3), False), (np.zeros((2, 2)), False),
    (np.array([[0.0, 1.0], [-1.0, 0.0]]), False),
])
def test_stability_classification(a, stable):
    assert check_stability(a)[0] is stable


def test_reference_drift_matrices_stable(linear_params):
    assert check_stability(build_M(linear_params))[0]
    _, model = sin_example(linear_params)
    assert check_stability(build_M(linear_params) + jacobian_pbar(model, np.zeros(4)))[0]
