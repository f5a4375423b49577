"""Generalized swarm recursion in stochastic-approximation form.

    theta_{n+1} = theta_n + eps * [M theta_n + P(theta_n, eta_n) + W(theta_n, r1, r2, eta_n)]

``M`` is the constant drift, ``P`` the attraction evaluated at the mean
random coefficients and ``W`` the zero-mean fluctuation from the centered
uniform draws.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (AttractorModel, ContractError, GpsoParams, ObjectiveId,
                   RandomSource, SwarmVector, query_attractors)
from .engine import RunTrace, StepRule, advance, iterate_batch, run_rule

__all__ = ["build_M", "UpdateDecomposition", "decompose", "step_gpso", "run_gpso",
           "run_gpso_batch", "empirical_W_mean", "experiment_params"]


def experiment_params(r: int = 5, dim: int = 1, **kw) -> GpsoParams:
    """Parameters of the numerical experiments (eps=0.01, chi=1, ...)."""
    return GpsoParams(r=r, dim=dim, **kw)


def build_M(params: GpsoParams) -> np.ndarray:
    """Drift matrix ``[[k1 I, -chi(c1+c2)/2 I], [k2 I, -chi(c1+c2)/2 I]]``."""
    eye = np.eye(params.n)
    b = -0.5 * params.chi * (params.c1 + params.c2)
    # + 0.0 turns the -0.0 off-diagonal entries into +0.0
    return np.block([[params.kappa1 * eye, b * eye],
                     [params.kappa2 * eye, b * eye]]) + 0.0


@dataclass(frozen=True)
class UpdateDecomposition:
    """Parts of the bracketed increment: drift + mean_attraction + fluctuation."""

    drift: np.ndarray
    mean_attraction: np.ndarray
    fluctuation: np.ndarray
    increment: np.ndarray

    def residual(self) -> float:
        """Max abs gap between the summed parts and the directly computed increment."""
        total = self.drift + self.mean_attraction + self.fluctuation
        return float(np.max(np.abs(total - self.increment)))


def _attraction(params: GpsoParams, pr, pg):
    half = params.chi * (0.5 * params.c1 * pr + 0.5 * params.c2 * pg)
    return np.concatenate([half, half], axis=-1)


def _fluctuation(params: GpsoParams, x, pr, pg, r1, r2):
    c1, c2, chi = params.c1, params.c2, params.chi
    centred = c1 * r1 + c2 * r2 - 0.5 * c1 - 0.5 * c2
    half = chi * (-(centred * x)) + chi * ((c1 * r1 - 0.5 * c1) * pr
                                           + (c2 * r2 - 0.5 * c2) * pg)
    return np.concatenate([half, half], axis=-1)


def decompose(theta: np.ndarray, params: GpsoParams, pr, pg, r1, r2) -> UpdateDecomposition:
    """Split the increment at ``theta`` for given (noisy) attractors and draws.

    ``fluctuation`` is built term by term, not as a residual, so the
    additivity check can catch sign errors.
    """
    theta = np.asarray(theta, dtype=float)
    n = params.n
    x = theta[..., n:]
    drift = theta @ build_M(params).T
    rule = StepRule.from_params(params)
    increment = _increment(rule, theta, pr, pg, r1, r2)
    return UpdateDecomposition(drift, _attraction(params, pr, pg),
                               _fluctuation(params, x, pr, pg, r1, r2), increment)


def _increment(rule: StepRule, theta, pr, pg, r1, r2):
    n = pr.shape[-1]
    v, x = theta[..., :n], theta[..., n:]
    a = rule.c1 * r1 * (pr - x) + rule.c2 * r2 * (pg - x)
    return np.concatenate([rule.k1 * v + rule.chi * a, rule.k2 * v + rule.chi * a], axis=-1)


def step_gpso(state: SwarmVector, params: GpsoParams, attractors: AttractorModel,
              rng: RandomSource) -> tuple[SwarmVector, UpdateDecomposition]:
    """One step of the generalized recursion.

    Tracked attractors are not updated here; callers follow up with
    :func:`sapso.core.update_attractors`.
    """
    _check_shape(state, params)
    pr, pg = query_attractors(attractors, state, rng)
    r1, r2 = rng.uniforms()
    rule = StepRule.from_params(params)
    new = advance(rule, state.theta, pr, pg, r1, r2)
    return SwarmVector(new, state.r, state.dim), decompose(state.theta, params, pr, pg, r1, r2)


def _check_shape(state: SwarmVector, params: GpsoParams):
    if (state.r, state.dim) != (params.r, params.dim):
        raise ContractError(
            f"state has r={state.r}, D={state.dim}; params say r={params.r}, D={params.dim}")


def run_gpso(theta0: SwarmVector, params: GpsoParams, attractors: AttractorModel,
             f: Optional[ObjectiveId], n_steps: int, seed: int, *, stream: int = 0,
             backend: Optional[str] = None) -> RunTrace:
    """Run the generalized recursion for ``n_steps`` steps.

    Raises :class:`~sapso.core.DivergenceError` (with the partial trace
    attached) when the divergence guard trips.
    """
    _check_shape(theta0, params)
    return run_rule(theta0, StepRule.from_params(params), attractors, f, n_steps, seed,
                    stream=stream, kind="gpso", dt=params.epsilon, params=params,
                    backend=backend)


def run_gpso_batch(theta0: SwarmVector, params: GpsoParams, attractors: AttractorModel,
                   n_reps: int, n_steps: int, seed: int, stream0: int = 0):
    """Iterate closed-form replications side by side; see :func:`iterate_batch`."""
    _check_shape(theta0, params)
    return iterate_batch(theta0, StepRule.from_params(params), attractors, n_reps,
                         n_steps, seed, stream0)


def empirical_W_mean(theta: SwarmVector, params: GpsoParams, attractors: AttractorModel,
                     n_draws: int, seed: int, *, degenerate: bool = False,
                     return_std: bool = False):
    """Monte Carlo mean of the fluctuation W at a fixed state.

    ``degenerate=True`` pins every uniform draw at 1/2.
    """
    _check_shape(theta, params)
    if attractors.noise.active and not attractors.noise.centered:
        raise ContractError("empirical_W_mean needs a centered noise model")
    rng = RandomSource(seed, params.r, params.dim, noise=attractors.noise,
                       degenerate=degenerate)
    n = params.n
    pr, pg = attractors.means(theta.theta)
    eta = rng.take_noise(n_draws)
    if eta is not None:
        pr, pg = pr + eta[:, :n], pg + eta[:, n:]
    U = rng.take_uniforms(n_draws)
    w = _fluctuation(params, theta.theta[n:], pr, pg, U[:, 0], U[:, 1])
    mean = w.mean(axis=0)
    if return_std:
        return mean, w.std(axis=0, ddof=1)
    return mean
