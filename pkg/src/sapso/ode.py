"""Mean-field ODE limit ``dtheta/dt = M theta + Pbar(theta)``."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (AttractorModel, ContractError, DivergenceError, GpsoParams,
                   NumericalError, SwarmVector, check_state)
from .engine import RunTrace
from .gpso import build_M

STABILITY_MARGIN = 1e-9
FD_REL_STEP = 1e-5


@dataclass(frozen=True)
class MeanField:
    """Right-hand side of the limit ODE.

    ``pbar`` maps a state (..., 2rD) to the mean attraction (..., 2rD).
    ``jac`` is an optional analytic Jacobian of ``pbar``.
    """

    m: np.ndarray
    pbar: Callable[[np.ndarray], np.ndarray]
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def from_attractors(cls, params: GpsoParams, attractors: AttractorModel,
                        pr_jac: Optional[Callable] = None,
                        pg_jac: Optional[Callable] = None) -> "MeanField":
        """Mean field for closed-form attractor means.

        ``pr_jac``/``pg_jac`` return the (rD, 2rD) Jacobians of the means;
        supply both to get an analytic Jacobian.
        """
        if attractors.mode != "closed_form":
            raise ContractError("the mean field needs closed-form attractor means")
        w1 = 0.5 * params.chi * params.c1
        w2 = 0.5 * params.chi * params.c2

        def pbar(theta):
            pr, pg = attractors.means(np.asarray(theta, dtype=float))
            half = w1 * pr + w2 * pg
            return np.concatenate([half, half], axis=-1)

        jac = None
        if pr_jac is not None and pg_jac is not None:
            def jac(theta):
                half = w1 * np.asarray(pr_jac(theta)) + w2 * np.asarray(pg_jac(theta))
                return np.vstack([half, half])

        return cls(build_M(params), pbar, jac)

    @classmethod
    def linear(cls, params: GpsoParams, pr_star=None, pg_star=None) -> "MeanField":
        """Mean field with state-independent attractor means (zero by default)."""
        n = params.n
        pr_star = np.zeros(n) if pr_star is None else pr_star
        pg_star = np.zeros(n) if pg_star is None else pg_star
        zero = np.zeros((n, 2 * n))
        return cls.from_attractors(params, AttractorModel.constant(pr_star, pg_star),
                                   lambda th: zero, lambda th: zero)


@dataclass
class OdeTrajectory:
    times: np.ndarray
    states: np.ndarray
    r: int = 0
    dim: int = 0

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def __len__(self):
        return len(self.times)


def mean_field_rhs(theta, model: MeanField) -> np.ndarray:
    theta = theta.theta if isinstance(theta, SwarmVector) else np.asarray(theta, dtype=float)
    return theta @ model.m.T + model.pbar(theta)


def integrate_ode(theta0, model: MeanField, T: float, h: float = 1e-3) -> OdeTrajectory:
    """Classical RK4 on ``[0, T]``.

    The step is ``T / ceil(T / h)`` so the grid ends exactly at ``T``.
    """
    if not (0 < h <= T):
        raise ContractError("need 0 < h <= T")
    r = dim = 0
    if isinstance(theta0, SwarmVector):
        r, dim = theta0.r, theta0.dim
        theta0 = theta0.theta
    y = np.array(theta0, dtype=float)
    n_steps = max(1, math.ceil(T / h - 1e-9))
    step = T / n_steps
    out = np.empty((n_steps + 1, y.size))
    out[0] = y
    for k in range(n_steps):
        k1 = mean_field_rhs(y, model)
        k2 = mean_field_rhs(y + 0.5 * step * k1, model)
        k3 = mean_field_rhs(y + 0.5 * step * k2, model)
        k4 = mean_field_rhs(y + step * k3, model)
        y = y + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        try:
            check_state(y, "ode")
        except DivergenceError as exc:
            raise DivergenceError(f"ODE state diverged at t={(k + 1) * step:g}: {exc}",
                                  step=k + 1) from None
        out[k + 1] = y
    return OdeTrajectory(step * np.arange(n_steps + 1), out, r, dim)


def interpolate_index(n_states: int, epsilon: float, t: float) -> int:
    """Index ``n`` with ``t`` in ``[eps*n, eps*n + eps)``."""
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    if not (0 <= t < epsilon * n_states):
        raise ContractError(f"t={t} outside [0, {epsilon * n_states})")
    n = int(t // epsilon)
    # guard against rounding in t // eps at grid points
    while n + 1 < n_states and epsilon * (n + 1) <= t:
        n += 1
    while n > 0 and epsilon * n > t:
        n -= 1
    return n


def interpolate_trace(trace: RunTrace, epsilon: float, t: float) -> SwarmVector:
    """Piecewise-constant interpolation ``theta^eps(t) = theta_n``."""
    return trace.state(interpolate_index(len(trace), epsilon, t))


def sup_deviation(trace: RunTrace, epsilon: float, ode: OdeTrajectory) -> float:
    """``max_t |theta^eps(t) - theta(t)|`` over the ODE time grid."""
    states = trace.states
    idx = [interpolate_index(len(states), epsilon, t) for t in ode.times
           if t < epsilon * len(states)]
    diff = states[idx] - ode.states[:len(idx)]
    return float(np.max(np.linalg.norm(diff, axis=1)))


def equilibrium(params: GpsoParams, pr_star, pg_star) -> SwarmVector:
    """Stationary point: zero velocity, position ``(c1 Pr* + c2 Pg*) / (c1 + c2)``."""
    csum = params.c1 + params.c2
    if csum <= 0:
        raise ContractError("c1 + c2 must be positive")
    pr_star = np.broadcast_to(np.asarray(pr_star, dtype=float).ravel(), (params.n,))
    pg_star = np.broadcast_to(np.asarray(pg_star, dtype=float).ravel(), (params.n,))
    x = (params.c1 * pr_star + params.c2 * pg_star) / csum
    return SwarmVector(np.concatenate([np.zeros(params.n), x]), params.r, params.dim)


def jacobian_pbar(model: MeanField, theta_star) -> np.ndarray:
    """Jacobian of ``pbar`` at ``theta_star``.

    Uses ``model.jac`` when given, else central differences with step
    ``1e-5 * max(1, |theta_j|)``.
    """
    theta = (theta_star.theta if isinstance(theta_star, SwarmVector)
             else np.asarray(theta_star, dtype=float))
    if model.jac is not None:
        return np.asarray(model.jac(theta), dtype=float)
    size = theta.size
    out = np.empty((size, size))
    for j in range(size):
        h = FD_REL_STEP * max(1.0, abs(theta[j]))
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        out[:, j] = (model.pbar(up) - model.pbar(dn)) / (up[j] - dn[j])
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite finite-difference Jacobian")
    return out


def check_stability(a) -> tuple[bool, np.ndarray]:
    """Stable iff every eigenvalue has real part below ``-1e-9``."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError("stability check needs a square matrix")
    try:
        eig = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue computation failed: {exc}") from None
    re = np.sort(eig.real)
    return bool(np.all(re < -STABILITY_MARGIN)), re
