"""Rate of convergence: scaled errors, Lyapunov equation, asymptotic covariance
and diffusion-limit checks.

Near a stable stationary point ``theta*`` the scaled errors
``z_n = (theta_n - theta*) / sqrt(eps)`` behave like the linear SDE

    dz = A z dt + Sigma^{1/2} dB,    A = M + Pbar_theta(theta*)

whose stationary covariance ``Xi`` solves ``A Xi + Xi A^T + Sigma = 0``.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .core import (ROLE_SDE, AttractorModel, ContractError, GpsoParams, NoiseModel,
                   NumericalError, RandomSource, SwarmVector)
from .engine import RunTrace
from .gpso import _attraction, _fluctuation, build_M, run_gpso_batch
from .ode import check_stability, equilibrium

REPS_PER_CHUNK = 250


def default_burn_in(epsilon: float) -> int:
    """Iterations discarded before stationary statistics: ceil(5 / eps)."""
    return math.ceil(5.0 / epsilon - 1e-9)


# ---------------------------------------------------------------------------
# scaled errors


@dataclass
class ScaledErrorSeries:
    z: np.ndarray
    burn_in: int
    epsilon: float
    theta_star: np.ndarray

    def reconstruct(self) -> np.ndarray:
        """``sqrt(eps) * z + theta*``: the original post-burn-in iterates."""
        return math.sqrt(self.epsilon) * self.z + self.theta_star


def scaled_errors(trace: RunTrace, theta_star, burn_in: int,
                  epsilon: Optional[float] = None) -> ScaledErrorSeries:
    theta_star = (theta_star.theta if isinstance(theta_star, SwarmVector)
                  else np.asarray(theta_star, dtype=float))
    if not 0 <= burn_in < len(trace):
        raise ContractError(f"burn_in={burn_in} must be in [0, {len(trace)})")
    eps = trace.dt if epsilon is None else epsilon
    z = (trace.states[burn_in:] - theta_star) / math.sqrt(eps)
    return ScaledErrorSeries(z, burn_in, eps, theta_star)


# ---------------------------------------------------------------------------
# Lyapunov equation and asymptotic covariance


def solve_lyapunov(a, sigma) -> np.ndarray:
    """Symmetric ``Xi`` with ``a Xi + Xi a^T = -sigma`` (dense vectorized solve).

    Size ``(2rD)^2``, fine up to 2rD of about 50.
    """
    a = np.asarray(a, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    d = a.shape[0]
    if a.shape != (d, d) or sigma.shape != (d, d):
        raise ContractError("a and sigma must be square and of equal size")
    stable, re = check_stability(a)
    if not stable:
        raise ContractError(f"a is not stable (max real part {re.max():.3g})")
    if np.max(np.abs(sigma - sigma.T), initial=0.0) > 1e-10 * max(1.0, np.abs(sigma).max()):
        raise ContractError("sigma must be symmetric")
    if np.linalg.eigvalsh(0.5 * (sigma + sigma.T)).min() < -1e-10 * max(1.0, np.abs(sigma).max()):
        raise ContractError("sigma must be positive semidefinite")
    eye = np.eye(d)
    # column-major vec: vec(aX) = (I kron a) vec X, vec(X a^T) = (a kron I) vec X
    K = np.kron(eye, a) + np.kron(a, eye)
    try:
        vec = np.linalg.solve(K, -sigma.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Lyapunov system is singular: {exc}") from None
    xi = vec.reshape(d, d, order="F")
    return 0.5 * (xi + xi.T)


def lyapunov_residual(a, xi, sigma) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a @ xi + xi @ a.T + sigma)))


def analytic_sigma_iid(params: GpsoParams, theta_star, attractors: AttractorModel) -> np.ndarray:
    """Closed-form Sigma for i.i.d. centered additive noise.

    At ``theta*`` both blocks of the combined noise are the same vector ``s``
    with ``s = chi*[c1 u1 (Pr-x) + c2 u2 (Pg-x) + c1 r1 eta_r + c2 r2 eta_g]``
    (``u = r - 1/2``), so ``Sigma = [[S, S], [S, S]]`` with ``S = Cov(s)``.
    """
    noise = attractors.noise
    if noise.kind == "custom" or not noise.centered:
        raise ContractError("analytic Sigma needs none or centered Gaussian noise")
    theta = (theta_star.theta if isinstance(theta_star, SwarmVector)
             else np.asarray(theta_star, dtype=float))
    n = params.n
    c1, c2 = params.c1, params.c2
    pr, pg = attractors.means(theta)
    x = theta[n:]
    C = noise.covariance(2 * n)
    crr, cgg, crg = C[:n, :n], C[n:, n:], C[:n, n:]
    S = (c1**2 * (0.25 * crr + np.diag(np.diag(crr)) / 12.0)
         + c2**2 * (0.25 * cgg + np.diag(np.diag(cgg)) / 12.0)
         + 0.25 * c1 * c2 * (crg + crg.T)
         + np.diag((c1**2 * (pr - x) ** 2 + c2**2 * (pg - x) ** 2) / 12.0))
    S = params.chi**2 * S
    return np.block([[S, S], [S, S]])


def combined_noise_samples(theta_star, params: GpsoParams, attractors: AttractorModel,
                           n_draws: int, seed: int, stream: int = 0,
                           degenerate: bool = False) -> np.ndarray:
    """Draws of ``P - Pbar + W`` at a fixed state, shape (n_draws, 2rD)."""
    theta = (theta_star.theta if isinstance(theta_star, SwarmVector)
             else np.asarray(theta_star, dtype=float))
    n = params.n
    rng = RandomSource(seed, params.r, params.dim, noise=attractors.noise, stream=stream,
                       degenerate=degenerate)
    pr_m, pg_m = attractors.means(theta)
    pr, pg = pr_m, pg_m
    eta = rng.take_noise(n_draws)
    if eta is not None:
        pr, pg = pr_m + eta[:, :n], pg_m + eta[:, n:]
    U = rng.take_uniforms(n_draws)
    w = _fluctuation(params, theta[n:], pr, pg, U[:, 0], U[:, 1])
    p_dev = _attraction(params, pr, pg) - _attraction(params, pr_m, pg_m)
    return np.broadcast_to(p_dev + w, (n_draws, 2 * n)).copy()


def lag_covariance(samples: np.ndarray, lag: int) -> np.ndarray:
    """``mean_j w_j w_{j+lag}^T`` over the sample sequence."""
    if lag == 0:
        return samples.T @ samples / len(samples)
    return samples[:-lag].T @ samples[lag:] / (len(samples) - lag)


def estimate_sigma(theta_star, params: GpsoParams, attractors: AttractorModel,
                   n_draws: int, max_lag: Optional[int] = None, seed: int = 0,
                   degenerate: bool = False) -> np.ndarray:
    """Monte Carlo Sigma: lag-0 second moment plus symmetrized lags 1..max_lag.

    The infinite lag sum is cut at ``max_lag``; by default 0 for i.i.d.
    noise models and 50 for custom samplers, which may be correlated.
    """
    if max_lag is None:
        max_lag = 50 if attractors.noise.kind == "custom" else 0
    w = combined_noise_samples(theta_star, params, attractors, n_draws, seed,
                               degenerate=degenerate)
    sigma = lag_covariance(w, 0)
    for k in range(1, max_lag + 1):
        ck = lag_covariance(w, k)
        sigma = sigma + ck + ck.T
    return 0.5 * (sigma + sigma.T)


@dataclass(frozen=True)
class DiffusionModel:
    """Linear SDE ``dz = a z dt + sigma^{1/2} dB`` and its stationary covariance."""

    a: np.ndarray
    sigma: np.ndarray
    xi: np.ndarray

    @classmethod
    def build(cls, a, sigma) -> "DiffusionModel":
        a = np.asarray(a, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        return cls(a, sigma, solve_lyapunov(a, sigma))

    @property
    def residual(self) -> float:
        return lyapunov_residual(self.a, self.xi, self.sigma)


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, q = np.linalg.eigh(0.5 * (m + m.T))
    return (q * np.sqrt(np.clip(w, 0.0, None))) @ q.T


# ---------------------------------------------------------------------------
# replication studies


@dataclass(frozen=True)
class _Constant:
    # picklable constant mean function for process pools
    value: tuple

    def __call__(self, theta):
        v = np.asarray(self.value)
        return np.broadcast_to(v, np.shape(theta)[:-1] + v.shape)


@dataclass(frozen=True)
class ReplicationConfig:
    """Everything needed to replay a replication study bit for bit."""

    params: GpsoParams
    attractors: AttractorModel
    theta0: SwarmVector
    theta_star: SwarmVector
    seed: int = 0

    @classmethod
    def constant_attractors(cls, params: GpsoParams, theta0=None, pr_star=None,
                            pg_star=None, noise: NoiseModel | None = None,
                            seed: int = 0) -> "ReplicationConfig":
        """Attractors with constant means plus additive noise.

        With zero means this is the quadratic example whose limit ODE is
        ``dtheta/dt = M theta``.
        """
        n = params.n
        pr_star = np.zeros(n) if pr_star is None else np.asarray(pr_star, float).ravel()
        pg_star = np.zeros(n) if pg_star is None else np.asarray(pg_star, float).ravel()
        noise = NoiseModel.gaussian() if noise is None else noise
        att = AttractorModel.closed_form(_Constant(tuple(pr_star)), _Constant(tuple(pg_star)),
                                         noise)
        star = equilibrium(params, pr_star, pg_star)
        if theta0 is None:
            theta0 = star
        elif not isinstance(theta0, SwarmVector):
            theta0 = SwarmVector(theta0, params.r, params.dim)
        return cls(params, att, theta0, star, seed)

    @property
    def drift(self) -> np.ndarray:
        """``M + Pbar_theta(theta*)`` for state-independent means."""
        return build_M(self.params)


@dataclass
class CovarianceAccumulator:
    """Sums for a pooled covariance; merging is associative."""

    dim: int
    n: int = 0
    s1: np.ndarray = None
    s2: np.ndarray = None

    def __post_init__(self):
        if self.s1 is None:
            self.s1 = np.zeros(self.dim)
            self.s2 = np.zeros((self.dim, self.dim))

    def add(self, z: np.ndarray) -> None:
        z = np.atleast_2d(z)
        self.n += z.shape[0]
        self.s1 += z.sum(axis=0)
        self.s2 += z.T @ z

    def merge(self, other: "CovarianceAccumulator") -> "CovarianceAccumulator":
        return CovarianceAccumulator(self.dim, self.n + other.n, self.s1 + other.s1,
                                     self.s2 + other.s2)

    @property
    def mean(self) -> np.ndarray:
        return self.s1 / self.n

    @property
    def covariance(self) -> np.ndarray:
        mu = self.mean
        cov = (self.s2 - self.n * np.outer(mu, mu)) / (self.n - 1)
        return 0.5 * (cov + cov.T)


@dataclass
class StationaryEstimate:
    covariance: np.ndarray
    mean: np.ndarray
    n_samples: int
    n_reps: int
    n_diverged: int
    samples: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)


def _run_chunk(args):
    config, start, count, burn_in, n_sample, stride = args
    p = config.params
    root = math.sqrt(p.epsilon)
    star = config.theta_star.theta
    # per-replication sums so replications that die later can be dropped
    s1 = np.zeros((count, p.size))
    s2 = np.zeros((count, p.size, p.size))
    keep = []
    alive = np.ones(count, dtype=bool)
    for n, theta, alive in run_gpso_batch(config.theta0, p, config.attractors, count,
                                          burn_in + n_sample, config.seed, stream0=start):
        if n <= burn_in:
            continue
        z = (theta - star) / root
        s1 += z
        s2 += z[:, :, None] * z[:, None, :]
        if (n - burn_in - 1) % stride == 0:
            keep.append(z)
    acc = CovarianceAccumulator(p.size, int(alive.sum()) * n_sample,
                                s1[alive].sum(axis=0), s2[alive].sum(axis=0))
    samples = (np.stack(keep, axis=1)[alive].reshape(-1, p.size) if keep
               else np.empty((0, p.size)))
    return acc, samples, int(count - alive.sum())


def empirical_stationary_covariance(n_reps: int, config: ReplicationConfig,
                                    burn_in: Optional[int] = None,
                                    n_sample: Optional[int] = None,
                                    sample_stride: int = 10, jobs: int = 1,
                                    max_divergent: float = 0.01) -> StationaryEstimate:
    """Pooled covariance of ``z_n`` over replications and post-burn-in steps.

    Replications are split into fixed chunks of 250 and reduced in chunk
    order, so the result does not depend on ``jobs``.  ``samples`` keeps
    every ``sample_stride``-th post-burn-in step of each replication.
    """
    eps = config.params.epsilon
    burn_in = default_burn_in(eps) if burn_in is None else int(burn_in)
    n_sample = math.ceil(10.0 / eps - 1e-9) if n_sample is None else int(n_sample)
    tasks = [(config, s, min(REPS_PER_CHUNK, n_reps - s), burn_in, n_sample, sample_stride)
             for s in range(0, n_reps, REPS_PER_CHUNK)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_chunk, tasks))
    else:
        results = [_run_chunk(t) for t in tasks]
    acc = CovarianceAccumulator(config.params.size)
    diverged = 0
    for part, _, nd in results:
        acc = acc.merge(part)
        diverged += nd
    if diverged > max_divergent * n_reps:
        raise NumericalError(f"{diverged} of {n_reps} replications diverged")
    samples = np.concatenate([s for _, s, _ in results])
    return StationaryEstimate(acc.covariance, acc.mean, acc.n, n_reps - diverged, diverged,
                              samples, {"burn_in": burn_in, "n_sample": n_sample})


# ---------------------------------------------------------------------------
# limit SDE


@dataclass
class SdePaths:
    times: np.ndarray
    states: np.ndarray  # (n_records, n_paths, dim)

    def pooled_covariance(self, t_min: float = 0.0) -> np.ndarray:
        sel = self.states[self.times >= t_min - 1e-12]
        flat = sel.reshape(-1, sel.shape[-1])
        acc = CovarianceAccumulator(flat.shape[1])
        acc.add(flat)
        return acc.covariance

    def terminal_covariance(self) -> np.ndarray:
        return np.cov(self.states[-1], rowvar=False)


def simulate_limit_sde(model: DiffusionModel, T: float, h: float = 1e-3,
                       n_paths: int = 1000, seed: int = 0, z0=None,
                       record_every: Optional[int] = None) -> SdePaths:
    """Euler-Maruyama paths of ``dz = a z dt + sigma^{1/2} dB``."""
    a = np.asarray(model.a, dtype=float)
    d = a.shape[0]
    n_steps = max(1, math.ceil(T / h - 1e-9))
    step = T / n_steps
    record_every = record_every or max(1, n_steps // 500)
    root = psd_sqrt(np.asarray(model.sigma, dtype=float)) * math.sqrt(step)
    gen = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=(0, ROLE_SDE))))
    z = np.zeros((n_paths, d)) if z0 is None else np.tile(np.asarray(z0, float), (n_paths, 1))
    drift = np.eye(d) + step * a
    times, recs = [0.0], [z.copy()]
    block = 512
    done = 0
    while done < n_steps:
        c = min(block, n_steps - done)
        xi = gen.standard_normal((c, n_paths, d))
        for k in range(c):
            z = z @ drift.T + xi[k] @ root.T
            done += 1
            if done % record_every == 0:
                times.append(done * step)
                recs.append(z.copy())
    return SdePaths(np.array(times), np.stack(recs))


# ---------------------------------------------------------------------------
# normality


@dataclass
class NormalityReport:
    k: int
    n: int
    n_effective: float
    mean_d2: float
    var_d2: float
    tail: dict
    normal: bool

    @property
    def mean_ratio(self) -> float:
        return self.mean_d2 / self.k


def normality_diagnostic(z: np.ndarray, xi: np.ndarray,
                         n_effective: Optional[float] = None,
                         min_samples: int = 500) -> NormalityReport:
    """Mahalanobis distances ``z^T Xi^{-1} z`` against chi-square(k).

    ``normal`` requires the mean of d^2 within ``3 sqrt(2k / N_eff)`` of k
    and each upper-tail fraction within four binomial standard errors.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    xi = np.asarray(xi, dtype=float)
    n, k = z.shape
    if n < min_samples:
        raise ContractError(f"need at least {min_samples} samples, got {n}")
    try:
        chol = np.linalg.cholesky(0.5 * (xi + xi.T))
    except np.linalg.LinAlgError:
        raise ContractError("xi is singular or not positive definite") from None
    if np.linalg.cond(xi) > 1e12:
        raise ContractError("xi is numerically singular")
    y = np.linalg.solve(chol, z.T)
    d2 = np.sum(y * y, axis=0)
    n_eff = float(n if n_effective is None else n_effective)
    tail = {}
    ok = abs(d2.mean() - k) <= 3.0 * math.sqrt(2.0 * k / n_eff)
    for q in (0.9, 0.95, 0.99):
        thr = float(stats.chi2.ppf(q, k))
        obs = float(np.mean(d2 > thr))
        exp = 1.0 - q
        tail[q] = (obs, exp)
        ok = ok and abs(obs - exp) <= 4.0 * math.sqrt(exp * (1 - exp) / n_eff)
    return NormalityReport(k, n, n_eff, float(d2.mean()), float(d2.var(ddof=1)), tail,
                           bool(ok))
