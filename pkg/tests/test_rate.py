import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad_vec
from scipy.linalg import expm, solve_continuous_lyapunov

from sapso import (AttractorModel, ContractError, DiffusionModel, GpsoParams, NoiseModel,
                   ReplicationConfig, SwarmVector, build_M, empirical_stationary_covariance,
                   estimate_sigma, normality_diagnostic, run_gpso, scaled_errors,
                   simulate_limit_sde, solve_lyapunov)
from sapso.rate import (CovarianceAccumulator, analytic_sigma_iid, combined_noise_samples,
                        default_burn_in, lag_covariance, lyapunov_residual)


def integral_xi(a, sigma):
    """Oracle: Xi = int_0^inf exp(a t) sigma exp(a^T t) dt."""
    val, _ = quad_vec(lambda t: expm(a * t) @ sigma @ expm(a.T * t), 0, np.inf,
                      epsabs=1e-12, epsrel=1e-12)
    return val


# ---------------------------------------------------------------- scaled errors

def _trace(states, eps=0.01):
    from sapso.engine import RunTrace
    return RunTrace(np.asarray(states, float), 1, 1, eps, 0)


def test_scaled_errors_at_equilibrium_vanish():
    star = np.array([0.0, 1.5])
    z = scaled_errors(_trace(np.tile(star, (10, 1))), star, 0)
    assert np.array_equal(z.z, np.zeros((10, 2)))


def test_scaled_errors_unit_offset():
    eps = 0.0625
    z = scaled_errors(_trace([[math.sqrt(eps), 0.0]], eps), np.zeros(2), 0)
    assert np.array_equal(z.z, [[1.0, 0.0]])


def test_scaled_errors_round_trip(linear_params):
    att = AttractorModel.constant([0.7, -0.2], [0.7, -0.2], NoiseModel.gaussian())
    rep = ReplicationConfig.constant_attractors(linear_params, None, [0.7, -0.2],
                                                [0.7, -0.2])
    tr = run_gpso(rep.theta_star, linear_params, att, None, 500, seed=1)
    z = scaled_errors(tr, rep.theta_star, 100)
    assert np.allclose(z.reconstruct(), tr.states[100:], rtol=0, atol=4e-16)
    # exact when theta* = 0 and sqrt(eps) is a power of two
    tr0 = run_gpso(SwarmVector.zeros(2, 1), linear_params.with_(epsilon=1 / 64),
                   AttractorModel.constant([0, 0], [0, 0], NoiseModel.gaussian()), None,
                   200, seed=2)
    z0 = scaled_errors(tr0, np.zeros(4), 0)
    assert np.array_equal(z0.reconstruct(), tr0.states)


def test_scaled_errors_burn_in_validation():
    with pytest.raises(ContractError):
        scaled_errors(_trace(np.zeros((5, 2))), np.zeros(2), 5)


def test_default_burn_in():
    assert default_burn_in(0.01) == 500
    assert default_burn_in(0.03) == 167


# ---------------------------------------------------------------- Lyapunov

def test_lyapunov_half_identity():
    assert np.allclose(solve_lyapunov(-0.5 * np.eye(3), np.eye(3)), np.eye(3),
                       rtol=0, atol=1e-14)


def test_lyapunov_drift_matrix_against_oracles(linear_params):
    a = build_M(linear_params)
    xi = solve_lyapunov(a, np.eye(4))
    assert lyapunov_residual(a, xi, np.eye(4)) < 1e-10
    assert np.array_equal(xi, xi.T)
    assert np.linalg.eigvalsh(xi).min() > 0
    assert np.max(np.abs(xi - integral_xi(a, np.eye(4)))) < 1e-6
    assert np.allclose(xi, solve_continuous_lyapunov(a, -np.eye(4)), rtol=0, atol=1e-12)


@pytest.mark.parametrize("a,sigma", [
    (np.eye(2), np.eye(2)),
    (-np.eye(2), np.array([[1.0, 2.0], [0.0, 1.0]])),
    (-np.eye(2), -np.eye(2)),
    (-np.eye(2), np.eye(3)),
])
def test_lyapunov_rejects_bad_input(a, sigma):
    with pytest.raises(ContractError):
        solve_lyapunov(a, sigma)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31))
def test_lyapunov_random_stable_systems(d, seed):
    g = np.random.default_rng(seed)
    b = g.normal(size=(d, d))
    skew = g.normal(size=(d, d))
    a = -(b @ b.T + 0.1 * np.eye(d)) + (skew - skew.T)
    c = g.normal(size=(d, d))
    sigma = c @ c.T
    xi = solve_lyapunov(a, sigma)
    assert np.array_equal(xi, xi.T)
    assert np.linalg.eigvalsh(xi).min() > -1e-9 * np.abs(xi).max()
    assert lyapunov_residual(a, xi, sigma) < 1e-8 * max(1.0, np.abs(sigma).max())


def test_diffusion_model_residual(linear_params):
    m = DiffusionModel.build(build_M(linear_params), np.eye(4))
    assert m.residual < 1e-10


# ---------------------------------------------------------------- Sigma

def test_sigma_zero_without_randomness(linear_params):
    att = AttractorModel.constant([0.0, 0.0], [0.0, 0.0])
    sig = estimate_sigma(np.zeros(4), linear_params, att, 1000, degenerate=True)
    assert np.array_equal(sig, np.zeros((4, 4)))


def test_linear_example_sigma(linear_params):
    # E[(c r eta)^2] = c^2 / 3 per attractor; two independent attractors -> 1.5
    expected = 1.5 * np.block([[np.eye(2), np.eye(2)], [np.eye(2), np.eye(2)]])
    rep = ReplicationConfig.constant_attractors(linear_params)
    an = analytic_sigma_iid(linear_params, rep.theta_star, rep.attractors)
    assert np.allclose(an, expected, rtol=0, atol=1e-15)
    n = 200_000
    w = combined_noise_samples(rep.theta_star, linear_params, rep.attractors, n, seed=3)
    prod = w[:, :, None] * w[:, None, :]
    bound = 4 * prod.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(prod.mean(axis=0) - expected) <= bound)


def test_analytic_sigma_off_equilibrium():
    p = GpsoParams(r=2, dim=1, c1=1.0, c2=2.0, chi=0.8)
    att = AttractorModel.constant([0.5, -1.0], [2.0, 0.3], NoiseModel.gaussian(0.7))
    theta = np.array([0.0, 0.0, 0.4, 0.1])
    n = 400_000
    w = combined_noise_samples(theta, p, att, n, seed=11)
    prod = w[:, :, None] * w[:, None, :]
    bound = 4 * prod.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(prod.mean(axis=0) - analytic_sigma_iid(p, theta, att)) <= bound)


def test_iid_noise_lag_one_vanishes(linear_params):
    rep = ReplicationConfig.constant_attractors(linear_params)
    n = 100_000
    w = combined_noise_samples(rep.theta_star, linear_params, rep.attractors, n, seed=5)
    c1 = lag_covariance(w, 1)
    prod = w[:-1, :, None] * w[1:, None, :]
    assert np.all(np.abs(c1) <= 4 * prod.std(axis=0) / math.sqrt(n - 1))


# ---------------------------------------------------------------- replication studies

def test_accumulator_merge_matches_numpy(rng):
    z = rng.normal(size=(1000, 3))
    a, b = CovarianceAccumulator(3), CovarianceAccumulator(3)
    a.add(z[:400])
    b.add(z[400:])
    m = a.merge(b)
    assert np.allclose(m.covariance, np.cov(z, rowvar=False), rtol=1e-12)


def test_noise_free_stationary_covariance_is_zero(linear_params):
    rep = ReplicationConfig.constant_attractors(linear_params, noise=NoiseModel.none())
    est = empirical_stationary_covariance(20, rep, burn_in=10, n_sample=50)
    assert np.array_equal(est.covariance, np.zeros((4, 4)))


def test_stationary_covariance_independent_of_jobs(linear_params):
    rep = ReplicationConfig.constant_attractors(linear_params, seed=9)
    a = empirical_stationary_covariance(600, rep, burn_in=20, n_sample=30, jobs=1)
    b = empirical_stationary_covariance(600, rep, burn_in=20, n_sample=30, jobs=2)
    assert np.array_equal(a.covariance, b.covariance)
    assert np.array_equal(a.samples, b.samples)


# ---------------------------------------------------------------- limit SDE

def test_sde_without_noise_stays_at_zero():
    m = DiffusionModel(-np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)))
    paths = simulate_limit_sde(m, 1.0, 0.01, 10, seed=0)
    assert np.array_equal(paths.states, np.zeros_like(paths.states))


def test_scalar_ou_variance():
    m = DiffusionModel.build([[-1.0]], [[2.0]])
    assert m.xi[0, 0] == pytest.approx(1.0, abs=1e-14)
    paths = simulate_limit_sde(m, 50.0, 0.01, 2000, seed=1)
    assert paths.pooled_covariance(10.0)[0, 0] == pytest.approx(1.0, rel=0.05)


def test_drift_matrix_sde_covariance(linear_params):
    m = DiffusionModel.build(build_M(linear_params), np.eye(4))
    cov = simulate_limit_sde(m, 50.0, 0.01, 2000, seed=2).pooled_covariance(10.0)
    assert np.linalg.norm(cov - m.xi) / np.linalg.norm(m.xi) < 0.10


# ---------------------------------------------------------------- normality

def test_normality_on_exact_gaussian(linear_params):
    xi = solve_lyapunov(build_M(linear_params), np.eye(4))
    z = np.random.default_rng(0).multivariate_normal(np.zeros(4), xi, size=20_000)
    rep = normality_diagnostic(z, xi)
    assert abs(rep.mean_d2 - 4) <= 3 * math.sqrt(8 / 20_000)
    assert rep.normal


def test_normality_flags_degenerate_samples():
    assert not normality_diagnostic(np.zeros((1000, 4)), np.eye(4)).normal


@pytest.mark.parametrize("z,xi", [
    (np.zeros((1000, 2)), np.array([[1.0, 1.0], [1.0, 1.0]])),
    (np.zeros((10, 2)), np.eye(2)),
])
def test_normality_rejects_bad_input(z, xi):
    with pytest.raises(ContractError):
        normality_diagnostic(z, xi)


class _MovingAverage:
    """eta_n = (e_n + e_{n-1}) / sqrt 2: unit variance, lag-one correlation 1/2."""

    def __init__(self):
        self.last = None

    def __call__(self, gen, n_steps, size):
        e = gen.standard_normal((n_steps + 1, size))
        if self.last is not None:
            e[0] = self.last
        self.last = e[-1].copy()
        return (e[1:] + e[:-1]) / math.sqrt(2)


def test_correlated_noise_uses_lag_sum(linear_params):
    att = AttractorModel.constant([0.0, 0.0], [0.0, 0.0],
                                  NoiseModel("custom", sampler=_MovingAverage()))
    sig = estimate_sigma(np.zeros(4), linear_params, att, 200_000, seed=4)
    # lag 0: 2 * 2.25 / 3 = 1.5; lag 1: 2 * 2.25 * (1/4) * (1/2) = 0.5625 each side
    assert sig[0, 0] == pytest.approx(1.5 + 2 * 0.5625, rel=0.05)
    att0 = AttractorModel.constant([0.0, 0.0], [0.0, 0.0],
                                   NoiseModel("custom", sampler=_MovingAverage()))
    lag0 = estimate_sigma(np.zeros(4), linear_params, att0, 200_000, max_lag=0, seed=4)
    assert lag0[0, 0] == pytest.approx(1.5, rel=0.05)
