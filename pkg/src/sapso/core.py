"""Shared domain types: swarm state, parameters, objectives, attractors and
seeded random streams.

State layout
------------
A swarm of ``r`` particles in ``D`` dimensions is stored as one flat vector
``theta = [v; x]`` of length ``2*r*D``.  Inside each block the order is
particle-major, dimension-minor (component ``i*D + d``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

DIVERGENCE_NORM = 1e12

# stream roles inside one RandomSource
ROLE_UNIFORM = 0
ROLE_NOISE = 1
ROLE_INIT = 2
ROLE_SDE = 3


class SapsoError(Exception):
    """Base class for all package errors."""


class ContractError(SapsoError, ValueError):
    """Raised when an operation is called outside its contract."""


class DivergenceError(SapsoError):
    """Raised when a state becomes non-finite or exceeds the divergence norm.

    ``trace`` holds the partial run (if any) up to the last good state.
    """

    def __init__(self, message: str, trace=None, step: Optional[int] = None):
        super().__init__(message)
        self.trace = trace
        self.step = step


class NumericalError(SapsoError):
    """Linear-algebra failure (singular system, eigen-solver non-convergence)."""


def check_state(theta: np.ndarray, where: str = "state") -> None:
    """Divergence guard: reject non-finite entries and norms above 1e12."""
    if not np.all(np.isfinite(theta)):
        raise DivergenceError(f"{where}: non-finite entries")
    nrm = float(np.linalg.norm(theta))
    if nrm > DIVERGENCE_NORM:
        raise DivergenceError(f"{where}: norm {nrm:.3e} exceeds {DIVERGENCE_NORM:.0e}")


# ---------------------------------------------------------------------------
# state and parameters


@dataclass(frozen=True)
class SwarmVector:
    """Stacked swarm state ``[v; x]`` (velocities first)."""

    theta: np.ndarray
    r: int
    dim: int

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if theta.size != 2 * self.r * self.dim:
            raise ContractError(
                f"state length {theta.size} != 2*r*D = {2 * self.r * self.dim}")
        check_state(theta)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_parts(cls, v, x) -> "SwarmVector":
        v = np.atleast_2d(np.asarray(v, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if v.shape != x.shape:
            raise ContractError("velocity and position blocks differ in shape")
        return cls(np.concatenate([v.ravel(), x.ravel()]), v.shape[0], v.shape[1])

    @classmethod
    def zeros(cls, r: int, dim: int) -> "SwarmVector":
        return cls(np.zeros(2 * r * dim), r, dim)

    @property
    def n(self) -> int:
        return self.r * self.dim

    @property
    def v(self) -> np.ndarray:
        return self.theta[: self.n].reshape(self.r, self.dim)

    @property
    def x(self) -> np.ndarray:
        return self.theta[self.n:].reshape(self.r, self.dim)

    def __len__(self):
        return self.theta.size


@dataclass(frozen=True)
class GpsoParams:
    """Coefficients of the generalized swarm recursion.

    ``epsilon`` is the step size; ``kappa1``/``kappa2`` weight the velocity in
    the velocity/position rows; ``chi`` scales the attraction terms.
    """

    epsilon: float = 0.01
    kappa1: float = -0.271
    kappa2: float = 1.0
    chi: float = 1.0
    c1: float = 1.5
    c2: float = 1.5
    r: int = 5
    dim: int = 1

    def __post_init__(self):
        if not self.epsilon >= 0.0 or not math.isfinite(self.epsilon):
            raise ContractError("epsilon must be a finite non-negative number")
        if self.c1 < 0 or self.c2 < 0 or self.c1 + self.c2 <= 0:
            raise ContractError("need c1, c2 >= 0 and c1 + c2 > 0")
        if int(self.r) < 1 or int(self.dim) < 1:
            raise ContractError("r and dim must be positive")
        for name in ("kappa1", "kappa2", "chi"):
            if not math.isfinite(getattr(self, name)):
                raise ContractError(f"{name} must be finite")

    @property
    def n(self) -> int:
        """Size of one block (r*D)."""
        return self.r * self.dim

    @property
    def size(self) -> int:
        return 2 * self.r * self.dim

    @classmethod
    def constriction_equivalent(cls, r: int = 5, dim: int = 1, c1: float = 1.5,
                                c2: float = 1.5):
        """Coefficients for which the recursion reproduces constriction 0.729."""
        return cls(epsilon=0.01, kappa1=-27.1, kappa2=72.9, chi=72.9,
                   c1=c1, c2=c2, r=r, dim=dim)

    def with_(self, **kw) -> "GpsoParams":
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# objectives


def sphere(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1])
    for d in range(x.shape[-1]):
        out = out + x[..., d] * x[..., d]
    return out


def rastrigin(x):
    x = np.asarray(x, dtype=float)
    dim = x.shape[-1]
    out = np.full(x.shape[:-1], 10.0 * dim)
    for d in range(dim):
        xd = x[..., d]
        out = out + (xd * xd - 10.0 * np.cos(2.0 * math.pi * xd))
    return out


OBJECTIVES: dict[str, Callable] = {"sphere": sphere, "rastrigin": rastrigin}
# ids understood by the compiled kernel
BUILTIN_IDS = {"sphere": 0, "rastrigin": 1}

ObjectiveId = Union[str, Callable]


def register_objective(name: str, fn: Callable) -> None:
    """Register ``fn(x) -> float`` (x has shape (..., D)) under ``name``."""
    if name in BUILTIN_IDS:
        raise ContractError(f"cannot override builtin objective {name!r}")
    OBJECTIVES[name] = fn


def resolve_objective(f: ObjectiveId) -> tuple[Optional[str], Callable]:
    if callable(f):
        return None, f
    try:
        return f, OBJECTIVES[f]
    except KeyError:
        raise ContractError(f"unknown objective {f!r}; known: {sorted(OBJECTIVES)}") from None


def evaluate_objective(f: ObjectiveId, x):
    """Evaluate an objective at ``x`` of shape (D,) or (..., D)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DivergenceError("objective evaluated at a non-finite point")
    _, fn = resolve_objective(f)
    out = fn(x)
    return float(out) if np.ndim(out) == 0 else np.asarray(out, dtype=float)


def _libm_values(obj_id: int, x: np.ndarray) -> np.ndarray:
    # scalar libm loop, mirrors the compiled kernel operation by operation
    r, dim = x.shape
    out = np.empty(r)
    if obj_id == 0:
        for i in range(r):
            s = 0.0
            for d in range(dim):
                s += x[i, d] * x[i, d]
            out[i] = s
    else:
        two_pi = 2.0 * math.pi
        for i in range(r):
            s = 10.0 * dim
            for d in range(dim):
                xd = x[i, d]
                s += xd * xd - 10.0 * math.cos(two_pi * xd)
            out[i] = s
    return out


def particle_values(f: ObjectiveId, x: np.ndarray) -> np.ndarray:
    """Objective value per particle, computed the same way in every backend."""
    name, fn = resolve_objective(f)
    if name in BUILTIN_IDS:
        return _libm_values(BUILTIN_IDS[name], x)
    return np.array([float(fn(row)) for row in x])


# ---------------------------------------------------------------------------
# noise and random streams


@dataclass(frozen=True)
class NoiseModel:
    """Additive noise on the attractors.

    Draws are vectors of length ``2*r*D``: the first half is added to Pr, the
    second half to Pg.  ``shared=True`` adds the same draw to both.
    ``kind="custom"`` calls ``sampler(generator, n_steps, size)`` which must
    return an array of shape ``(n_steps, size)``.
    """

    kind: str = "none"
    scale: float = 1.0
    mean: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None
    shared: bool = False
    sampler: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("none", "iid_gaussian", "custom"):
            raise ContractError(f"unknown noise kind {self.kind!r}")
        if self.kind == "custom" and self.sampler is None:
            raise ContractError("custom noise needs a sampler")

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls()

    @classmethod
    def gaussian(cls, scale: float = 1.0, mean=None, cov=None, shared: bool = False):
        return cls("iid_gaussian", scale=scale, mean=mean, cov=cov, shared=shared)

    @property
    def active(self) -> bool:
        return self.kind != "none"

    @property
    def centered(self) -> bool:
        return self.mean is None or not np.any(np.asarray(self.mean))

    def covariance(self, size: int) -> np.ndarray:
        """Covariance of one full draw of length ``size`` (= 2*r*D)."""
        if self.kind == "none":
            return np.zeros((size, size))
        if self.kind == "custom":
            raise ContractError("covariance of a custom stream is not known")
        half = size // 2
        if self.cov is not None:
            base = np.asarray(self.cov, dtype=float) * self.scale**2
        else:
            base = np.eye(half if self.shared else size) * self.scale**2
        if self.shared:
            return np.block([[base, base], [base, base]])
        return base

    def sample(self, gen: np.random.Generator, n_steps: int, size: int) -> np.ndarray:
        if self.kind == "custom":
            out = np.asarray(self.sampler(gen, n_steps, size), dtype=float)
            if out.shape != (n_steps, size):
                raise ContractError("custom sampler returned the wrong shape")
            return out
        width = size // 2 if self.shared else size
        z = gen.standard_normal((n_steps, width))
        if self.cov is not None:
            w, q = np.linalg.eigh(np.asarray(self.cov, dtype=float))
            root = q * np.sqrt(np.clip(w, 0.0, None))
            z = z @ root.T
        z = z * self.scale
        if self.mean is not None:
            z = z + np.broadcast_to(np.asarray(self.mean, dtype=float), (width,))
        if self.shared:
            z = np.concatenate([z, z], axis=1)
        return z


class _Buffered:
    """Fixed-size block buffer over a generator.

    Blocks are always ``block`` steps long so the sequence seen by a consumer
    does not depend on how many steps it asks for at a time.
    """

    def __init__(self, make_block: Callable[[], np.ndarray], block: int):
        self._make = make_block
        self._block = block
        self._buf = make_block()
        self._pos = 0

    def take(self, n: int) -> np.ndarray:
        parts = []
        while n > 0:
            if self._pos == self._block:
                self._buf = self._make()
                self._pos = 0
            k = min(n, self._block - self._pos)
            parts.append(self._buf[self._pos:self._pos + k])
            self._pos += k
            n -= k
        return parts[0] if len(parts) == 1 else np.concatenate(parts)


class RandomSource:
    """Seeded per-replication random streams.

    Each ``(seed, stream, role)`` triple maps to its own PCG64 generator via
    ``SeedSequence(seed, spawn_key=(stream, role))``, so uniform draws, noise
    draws and initial positions are mutually independent and replications
    never share draws.  Per step the uniform stream yields ``r1`` then ``r2``,
    each particle-major, dimension-minor.
    """

    BLOCK = 256

    def __init__(self, seed: int, r: int, dim: int, noise: NoiseModel | None = None,
                 stream: int = 0, degenerate: bool = False):
        self.seed = int(seed)
        self.stream = int(stream)
        self.r, self.dim = int(r), int(dim)
        self.noise_model = noise or NoiseModel.none()
        self.degenerate = degenerate
        n = self.r * self.dim
        if degenerate:
            half = np.full((self.BLOCK, 2, n), 0.5)
            self._u = _Buffered(lambda: half, self.BLOCK)
        else:
            gu = self.generator(ROLE_UNIFORM)
            self._u = _Buffered(lambda: gu.random((self.BLOCK, 2, n)), self.BLOCK)
        if self.noise_model.active:
            gn = self.generator(ROLE_NOISE)
            nm = self.noise_model
            self._eta = _Buffered(lambda: nm.sample(gn, self.BLOCK, 2 * n), self.BLOCK)
        else:
            self._eta = None

    def generator(self, role: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, role))
        return np.random.Generator(np.random.PCG64(ss))

    def uniforms(self) -> tuple[np.ndarray, np.ndarray]:
        u = self._u.take(1)[0]
        return u[0], u[1]

    def take_uniforms(self, n_steps: int) -> np.ndarray:
        """Uniform draws for ``n_steps`` steps, shape (n_steps, 2, r*D)."""
        return self._u.take(n_steps)

    def noise(self) -> Optional[np.ndarray]:
        return None if self._eta is None else self._eta.take(1)[0]

    def take_noise(self, n_steps: int) -> Optional[np.ndarray]:
        return None if self._eta is None else self._eta.take(n_steps)

    def initial_state(self, low: float = -5.0, high: float = 5.0) -> SwarmVector:
        """Zero velocities, positions uniform in ``[low, high)^D``."""
        g = self.generator(ROLE_INIT)
        x = g.uniform(low, high, size=(self.r, self.dim))
        return SwarmVector.from_parts(np.zeros_like(x), x)


# ---------------------------------------------------------------------------
# attractors


def neighbor_table(topology: str, r: int) -> np.ndarray:
    """Neighborhood index table, one ascending row per particle.

    ``"global"`` uses the whole swarm; ``"ring:k"`` uses particles within
    ``k`` positions on a ring (including the particle itself).
    """
    if topology == "global":
        return np.tile(np.arange(r, dtype=np.int64), (r, 1))
    if topology.startswith("ring"):
        _, _, k = topology.partition(":")
        k = int(k or 1)
        if k < 0:
            raise ContractError("ring radius must be non-negative")
        rows = [sorted({(i + o) % r for o in range(-k, k + 1)}) for i in range(r)]
        width = max(len(row) for row in rows)
        # pad with repeats of the last index; duplicates never change an argmin
        return np.array([row + [row[-1]] * (width - len(row)) for row in rows],
                        dtype=np.int64)
    raise ContractError(f"unknown topology {topology!r}")


@dataclass(frozen=True)
class AttractorModel:
    """Provider of the personal-best (Pr) and neighborhood-best (Pg) points.

    ``tracked`` mode keeps the real swarm history.  ``closed_form`` mode uses
    mean functions ``pr_fn(theta)``/``pg_fn(theta)``; they receive states of
    shape (..., 2*r*D) and return (..., r*D).
    """

    mode: str
    noise: NoiseModel = field(default_factory=NoiseModel)
    pr_fn: Optional[Callable] = None
    pg_fn: Optional[Callable] = None
    topology: str = "global"
    pr: Optional[np.ndarray] = None
    pg: Optional[np.ndarray] = None
    pr_f: Optional[np.ndarray] = None
    pg_f: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in ("tracked", "closed_form"):
            raise ContractError(f"unknown attractor mode {self.mode!r}")
        if self.mode == "closed_form" and (self.pr_fn is None or self.pg_fn is None):
            raise ContractError("closed_form attractors need pr_fn and pg_fn")

    @classmethod
    def tracked(cls, noise: NoiseModel | None = None, topology: str = "global"):
        return cls("tracked", noise=noise or NoiseModel.none(), topology=topology)

    @classmethod
    def closed_form(cls, pr_fn, pg_fn, noise: NoiseModel | None = None):
        return cls("closed_form", noise=noise or NoiseModel.none(), pr_fn=pr_fn, pg_fn=pg_fn)

    @classmethod
    def constant(cls, pr_star, pg_star, noise: NoiseModel | None = None):
        """Closed-form attractors whose means do not depend on the state."""
        pr_star = np.asarray(pr_star, dtype=float).ravel()
        pg_star = np.asarray(pg_star, dtype=float).ravel()

        def pr_fn(theta):
            return np.broadcast_to(pr_star, np.shape(theta)[:-1] + pr_star.shape)

        def pg_fn(theta):
            return np.broadcast_to(pg_star, np.shape(theta)[:-1] + pg_star.shape)

        return cls.closed_form(pr_fn, pg_fn, noise)

    @property
    def initialized(self) -> bool:
        return self.pr is not None

    def means(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Noise-free attractor values at ``theta`` (flat vectors)."""
        if self.mode == "closed_form":
            return (np.asarray(self.pr_fn(theta), dtype=float),
                    np.asarray(self.pg_fn(theta), dtype=float))
        if not self.initialized:
            raise ContractError("tracked attractors queried before the first update")
        return self.pr.ravel(), self.pg.ravel()


def update_attractors(state: SwarmVector, attractors: AttractorModel,
                      f: ObjectiveId) -> AttractorModel:
    """Record the swarm's current positions in the Pr/Pg memory.

    Pr moves only on a strict improvement.  Pg is the best Pr in the
    particle's neighborhood; ties go to the lowest index and an equal-valued
    incumbent is kept.
    """
    if attractors.mode != "tracked":
        raise ContractError("update_attractors needs tracked attractors")
    x = state.x
    fx = particle_values(f, x)
    if not np.all(np.isfinite(fx)):
        raise DivergenceError("objective returned non-finite values")
    nb = neighbor_table(attractors.topology, state.r)
    if not attractors.initialized:
        pr, pr_f = x.copy(), fx.copy()
        pg, pg_f = np.empty_like(pr), np.full(state.r, np.inf)
    else:
        better = fx < attractors.pr_f
        pr = np.where(better[:, None], x, attractors.pr)
        pr_f = np.where(better, fx, attractors.pr_f)
        pg, pg_f = attractors.pg.copy(), attractors.pg_f.copy()
    for i in range(state.r):
        row = nb[i]
        j = row[int(np.argmin(pr_f[row]))]
        if pr_f[j] < pg_f[i]:
            pg[i] = pr[j]
            pg_f[i] = pr_f[j]
    return replace(attractors, pr=pr, pg=pg, pr_f=pr_f, pg_f=pg_f)


def query_attractors(attractors: AttractorModel, theta, rng: RandomSource):
    """Return ``(Pr(theta, eta), Pg(theta, eta))`` with a fresh noise draw."""
    theta = theta.theta if isinstance(theta, SwarmVector) else np.asarray(theta)
    pr, pg = attractors.means(theta)
    if not attractors.noise.active:
        return pr.copy(), pg.copy()
    eta = rng.noise()
    if eta is None:
        raise ContractError("attractors are noisy but the random source has no noise stream")
    n = pr.shape[-1]
    return pr + eta[:n], pg + eta[n:]
