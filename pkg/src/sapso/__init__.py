"""Particle swarm optimization analysed as constant-step stochastic approximation.

Classic and generalized swarm updates, the mean-field ODE limit, and the
diffusion-limit (sqrt(eps)) rate analysis with Monte Carlo checks.
"""
from ._backend import DEFAULT as BACKEND
from .classic import ClassicVariant, run_classic, step_classic
from .core import (AttractorModel, ContractError, DivergenceError, GpsoParams,
                   NoiseModel, NumericalError, RandomSource, SwarmVector,
                   evaluate_objective, query_attractors, register_objective,
                   update_attractors)
from .engine import RunTrace
from .gpso import build_M, empirical_W_mean, run_gpso, step_gpso
from .ode import (MeanField, check_stability, equilibrium, integrate_ode,
                  interpolate_trace, jacobian_pbar, mean_field_rhs)
from .rate import (DiffusionModel, ReplicationConfig, empirical_stationary_covariance,
                   estimate_sigma, normality_diagnostic, scaled_errors,
                   simulate_limit_sde, solve_lyapunov)

__version__ = "0.1.0"
