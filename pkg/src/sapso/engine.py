"""Run drivers shared by the classic and generalized swarm updates."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import _backend
from .core import (BUILTIN_IDS, DIVERGENCE_NORM, AttractorModel, ContractError,
                   DivergenceError, GpsoParams, ObjectiveId, RandomSource,
                   SwarmVector, neighbor_table, resolve_objective,
                   update_attractors)

MODE_GPSO = 0
MODE_CLASSIC = 1
CHUNK = 4096


@dataclass(frozen=True)
class StepRule:
    """Coefficients of one velocity/position update.

    gpso:    v' = v + eps*(k1*v + chi*a),  x' = x + eps*(k2*v + chi*a)
    classic: v' = g*(w*v + a),             x' = x + v'
    with a = c1*r1*(Pr - x) + c2*r2*(Pg - x).
    """

    mode: int
    c1: float
    c2: float
    eps: float = 0.0
    k1: float = 0.0
    k2: float = 0.0
    chi: float = 1.0
    g: float = 1.0
    w: float = 1.0

    @classmethod
    def from_params(cls, p: GpsoParams) -> "StepRule":
        return cls(MODE_GPSO, p.c1, p.c2, eps=p.epsilon, k1=p.kappa1, k2=p.kappa2, chi=p.chi)

    def kernel_args(self):
        return (self.mode, self.eps, self.k1, self.k2, self.chi, self.c1, self.c2,
                self.g, self.w)


def advance(rule: StepRule, theta: np.ndarray, pr: np.ndarray, pg: np.ndarray,
            r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """One update on flat (or batched, leading axes) states.

    The expression order matches the kernels exactly.
    """
    n = pr.shape[-1]
    v = theta[..., :n]
    x = theta[..., n:]
    a = rule.c1 * r1 * (pr - x) + rule.c2 * r2 * (pg - x)
    if rule.mode == MODE_GPSO:
        vn = v + rule.eps * (rule.k1 * v + rule.chi * a)
        xn = x + rule.eps * (rule.k2 * v + rule.chi * a)
    else:
        vn = rule.g * (rule.w * v + a)
        xn = x + vn
    return np.concatenate([vn, xn], axis=-1)


@dataclass
class RunTrace:
    """States ``theta_0 .. theta_N`` of one run plus what is needed to replay it."""

    states: np.ndarray
    r: int
    dim: int
    dt: float
    seed: int
    stream: int = 0
    kind: str = "gpso"
    params: Optional[GpsoParams] = None
    objective: Optional[str] = None
    pr: Optional[np.ndarray] = None
    pg: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return len(self) - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self))

    def state(self, n: int) -> SwarmVector:
        return SwarmVector(self.states[n], self.r, self.dim)

    def positions(self) -> np.ndarray:
        """Positions as an array of shape (N+1, r, D)."""
        return self.states[:, self.r * self.dim:].reshape(len(self), self.r, self.dim)

    def velocities(self) -> np.ndarray:
        return self.states[:, :self.r * self.dim].reshape(len(self), self.r, self.dim)


def _kernel_objective(f: ObjectiveId, backend: Optional[str]):
    name, fn = resolve_objective(f)
    if name in BUILTIN_IDS:
        return BUILTIN_IDS[name], _backend.get(backend), name
    if backend not in (None, "python"):
        raise ContractError("custom objectives run only on the python backend")
    return fn, _backend.get("python"), name


def run_rule(theta0: SwarmVector, rule: StepRule, attractors: AttractorModel,
             f: Optional[ObjectiveId], n_steps: int, seed: int, *, stream: int = 0,
             kind: str = "gpso", dt: float = 1.0, params: Optional[GpsoParams] = None,
             backend: Optional[str] = None) -> RunTrace:
    """Run ``n_steps`` updates from ``theta0``; returns a trace of length n_steps+1."""
    if int(n_steps) < 1:
        raise ContractError("n_steps must be >= 1")
    n_steps = int(n_steps)
    r, dim = theta0.r, theta0.dim
    n = r * dim
    rng = RandomSource(seed, r, dim, noise=attractors.noise, stream=stream)
    states = np.empty((n_steps + 1, 2 * n))
    states[0] = theta0.theta
    trace = RunTrace(states, r, dim, dt, seed, stream, kind, params)
    if attractors.mode == "tracked":
        if f is None:
            raise ContractError("tracked attractors need an objective")
        obj, kern, trace.objective = _kernel_objective(f, backend)
        if not attractors.initialized:
            attractors = update_attractors(theta0, attractors, f)
        trace.pr = np.empty((n_steps + 1, n))
        trace.pg = np.empty((n_steps + 1, n))
        trace.pr[0] = attractors.pr.ravel()
        trace.pg[0] = attractors.pg.ravel()
        theta = theta0.theta.copy()
        pr = np.ascontiguousarray(attractors.pr, dtype=float).copy()
        pg = np.ascontiguousarray(attractors.pg, dtype=float).copy()
        pr_f = attractors.pr_f.astype(float).copy()
        pg_f = attractors.pg_f.astype(float).copy()
        nbr = np.ascontiguousarray(neighbor_table(attractors.topology, r))
        no_eta = np.empty((0, 2 * n))
        done = 0
        while done < n_steps:
            c = min(CHUNK, n_steps - done)
            U = np.ascontiguousarray(rng.take_uniforms(c))
            eta = rng.take_noise(c)
            eta = no_eta if eta is None else np.ascontiguousarray(eta)
            k, diverged = kern.run_tracked(
                theta, pr, pr_f, pg, pg_f, U, eta, nbr, obj, *rule.kernel_args(),
                states[done + 1:done + 1 + c], trace.pr[done + 1:done + 1 + c],
                trace.pg[done + 1:done + 1 + c], DIVERGENCE_NORM)
            if diverged:
                _truncate(trace, done + k + 1)
                raise DivergenceError(
                    f"state diverged at step {done + k + 1}", trace=trace, step=done + k + 1)
            done += c
        return trace

    theta = theta0.theta.copy()
    for k in range(1, n_steps + 1):
        pr, pg = attractors.means(theta)
        eta = rng.noise()
        if eta is not None:
            pr, pg = pr + eta[:n], pg + eta[n:]
        r1, r2 = rng.uniforms()
        theta = advance(rule, theta, pr, pg, r1, r2)
        ss = float(np.dot(theta, theta))
        if not np.isfinite(ss) or ss > DIVERGENCE_NORM**2:
            _truncate(trace, k)
            raise DivergenceError(f"state diverged at step {k}", trace=trace, step=k)
        states[k] = theta
    return trace


def _truncate(trace: RunTrace, length: int) -> None:
    trace.states = trace.states[:length]
    if trace.pr is not None:
        trace.pr = trace.pr[:length]
        trace.pg = trace.pg[:length]
    trace.meta["diverged"] = True


def iterate_batch(theta0: SwarmVector, rule: StepRule, attractors: AttractorModel,
                  n_reps: int, n_steps: int, seed: int, stream0: int = 0
                  ) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Step ``n_reps`` independent closed-form replications together.

    Replication ``i`` uses stream ``stream0 + i`` and reproduces exactly the
    single run with that stream.  Yields ``(n, states, alive)`` for
    n = 0..n_steps; ``states`` has shape (n_reps, 2rD).  Replications that
    trip the divergence guard are marked dead and keep stepping on garbage.
    """
    if attractors.mode != "closed_form":
        raise ContractError("batched replications need closed-form attractors")
    n = theta0.n
    sources = [RandomSource(seed, theta0.r, theta0.dim, noise=attractors.noise,
                            stream=stream0 + i) for i in range(n_reps)]
    theta = np.tile(theta0.theta, (n_reps, 1))
    alive = np.ones(n_reps, dtype=bool)
    yield 0, theta, alive
    step = 0
    with np.errstate(all="ignore"):
        while step < n_steps:
            c = min(RandomSource.BLOCK, n_steps - step)
            U = np.stack([s.take_uniforms(c) for s in sources])
            eta = None
            if attractors.noise.active:
                eta = np.stack([s.take_noise(c) for s in sources])
            for k in range(c):
                pr, pg = attractors.means(theta)
                if eta is not None:
                    pr = pr + eta[:, k, :n]
                    pg = pg + eta[:, k, n:]
                theta = advance(rule, theta, pr, pg, U[:, k, 0], U[:, k, 1])
                ss = np.einsum("ij,ij->i", theta, theta)
                alive &= np.isfinite(ss) & (ss <= DIVERGENCE_NORM**2)
                step += 1
                yield step, theta, alive
