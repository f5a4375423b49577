"""Classic swarm updates: basic, inertia weight and constriction.

All three share one form, ``v' = g*(w*v + a)`` and ``x' = x + v'``:

=============  =====  =====
variant        g      w
=============  =====  =====
basic          1      1
inertia(w)     1      w
constriction   chi    1
=============  =====  =====
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .core import (AttractorModel, ContractError, ObjectiveId, RandomSource,
                   SwarmVector, query_attractors)
from .engine import MODE_CLASSIC, RunTrace, StepRule, advance, run_rule


@dataclass(frozen=True)
class ClassicVariant:
    kind: str = "basic"
    w: float = 1.0
    chi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("basic", "inertia", "constriction"):
            raise ContractError(f"unknown classic variant {self.kind!r}")
        if not (math.isfinite(self.w) and math.isfinite(self.chi)):
            raise ContractError("w and chi must be finite")

    @classmethod
    def basic(cls):
        return cls("basic")

    @classmethod
    def inertia(cls, w: float):
        return cls("inertia", w=w)

    @classmethod
    def constriction(cls, chi: float):
        return cls("constriction", chi=chi)

    @classmethod
    def parse(cls, text: str) -> "ClassicVariant":
        """Parse ``basic``, ``inertia:0.7`` or ``constriction:0.729``."""
        kind, _, val = text.partition(":")
        if kind == "basic":
            return cls.basic()
        if kind == "inertia":
            return cls.inertia(float(val or 0.729))
        if kind == "constriction":
            return cls.constriction(float(val or 0.729))
        raise ContractError(f"unknown classic variant {text!r}")

    def __str__(self):
        if self.kind == "inertia":
            return f"inertia:{self.w!r}"
        if self.kind == "constriction":
            return f"constriction:{self.chi!r}"
        return "basic"

    def rule(self, c1: float, c2: float) -> StepRule:
        if self.kind == "basic":
            return StepRule(MODE_CLASSIC, c1, c2)
        if self.kind == "inertia":
            return StepRule(MODE_CLASSIC, c1, c2, w=self.w)
        return StepRule(MODE_CLASSIC, c1, c2, g=self.chi)


def step_classic(state: SwarmVector, variant: ClassicVariant, c1: float, c2: float,
                 attractors: AttractorModel, rng: RandomSource) -> SwarmVector:
    """One classic update; new velocity first, then ``x += v_new``."""
    pr, pg = query_attractors(attractors, state, rng)
    r1, r2 = rng.uniforms()
    new = advance(variant.rule(c1, c2), state.theta, pr, pg, r1, r2)
    return SwarmVector(new, state.r, state.dim)


def run_classic(theta0: SwarmVector, variant: ClassicVariant, c1: float, c2: float,
                attractors: AttractorModel, f: Optional[ObjectiveId], n_steps: int,
                seed: int, *, stream: int = 0, backend: Optional[str] = None) -> RunTrace:
    trace = run_rule(theta0, variant.rule(c1, c2), attractors, f, n_steps, seed,
                     stream=stream, kind="classic", dt=1.0, backend=backend)
    trace.meta["variant"] = str(variant)
    trace.meta["c1"], trace.meta["c2"] = c1, c2
    return trace
