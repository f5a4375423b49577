"""Command-line experiment runner.

    sapso run | ode | rate | lyapunov | bench | repro-paper  [flags]

Exit codes: 0 ok, 1 configuration error, 2 divergence, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import _backend
from .classic import ClassicVariant, run_classic
from .core import (AttractorModel, ContractError, DivergenceError, GpsoParams,
                   NoiseModel, NumericalError, RandomSource, SwarmVector,
                   evaluate_objective, resolve_objective)
from .engine import RunTrace
from .gpso import build_M, run_gpso
from .io import (emit_attractor_csv, emit_trace_csv, matrix_json, write_json,
                 write_table_csv)
from .ode import MeanField, check_stability, equilibrium, integrate_ode, sup_deviation
from .rate import (DiffusionModel, ReplicationConfig, analytic_sigma_iid,
                   default_burn_in, empirical_stationary_covariance, estimate_sigma,
                   lyapunov_residual, normality_diagnostic, scaled_errors,
                   simulate_limit_sde, solve_lyapunov)

COMMANDS = ("run", "ode", "rate", "lyapunov", "bench", "repro-paper")


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment configuration; stored as ``key = value`` lines."""

    objective: str = "sphere"
    dim: int = 1
    particles: int = 5
    epsilon: float = 0.01
    kappa1: float = -0.271
    kappa2: float = 1.0
    chi: float = 1.0
    c1: float = 1.5
    c2: float = 1.5
    variant: str = "gpso"
    noise: str = "none"
    topology: str = "global"
    steps: int = 10000
    reps: int = 2000
    seed: int = 0
    burn_in: int = -1
    init_low: float = -5.0
    init_high: float = 5.0
    T: float = 10.0
    h: float = 1e-3
    every: int = 1
    max_lag: int = -1
    sigma_draws: int = 200000
    sigma: str = "identity"
    sde_paths: int = 2000
    sde_T: float = 20.0
    jobs: int = 1
    out: str = "out"

    @property
    def params(self) -> GpsoParams:
        return GpsoParams(self.epsilon, self.kappa1, self.kappa2, self.chi, self.c1,
                          self.c2, self.particles, self.dim)

    @property
    def noise_model(self) -> NoiseModel:
        return parse_noise(self.noise)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n"
                       if isinstance(getattr(self, f.name), float)
                       else f"{f.name} = {getattr(self, f.name)}\n"
                       for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls().updated(parse_kv(text))

    def updated(self, values: dict) -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(self)}
        conv = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in types:
                raise ContractError(f"unknown config key {key!r}")
            kind = types[key]
            try:
                conv[key] = (int(raw) if kind == "int" else
                             float(raw) if kind == "float" else str(raw).strip())
            except ValueError:
                raise ContractError(f"bad value for {key}: {raw!r}") from None
        cfg = replace(self, **conv)
        cfg.params  # validate
        cfg.noise_model
        return cfg


def parse_kv(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ContractError(f"config line {lineno}: expected key = value")
        out[key.strip()] = val.strip()
    return out


def parse_noise(text: str) -> NoiseModel:
    """``none``, ``gaussian[:scale]`` or ``gaussian-shared[:scale]``."""
    kind, _, scale = text.partition(":")
    if kind == "none":
        return NoiseModel.none()
    if kind in ("gaussian", "gaussian-shared"):
        try:
            s = float(scale or 1.0)
        except ValueError:
            raise ContractError(f"bad noise scale {scale!r}") from None
        return NoiseModel.gaussian(s, shared=kind.endswith("shared"))
    raise ContractError(f"unknown noise {text!r}")


# ---------------------------------------------------------------------------
# shared helpers


def collapse_diameter(positions: np.ndarray) -> float:
    """Largest pairwise distance between particles, positions (r, D)."""
    diff = positions[:, None, :] - positions[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=-1)).max())


def initial_state(cfg: ExperimentConfig) -> SwarmVector:
    return RandomSource(cfg.seed, cfg.particles, cfg.dim).initial_state(cfg.init_low,
                                                                        cfg.init_high)


def run_swarm(cfg: ExperimentConfig, backend: Optional[str] = None) -> RunTrace:
    """Tracked-attractor run described by ``cfg``."""
    theta0 = initial_state(cfg)
    att = AttractorModel.tracked(cfg.noise_model, cfg.topology)
    resolve_objective(cfg.objective)
    if cfg.variant == "gpso":
        return run_gpso(theta0, cfg.params, att, cfg.objective, cfg.steps, cfg.seed,
                        backend=backend)
    variant = ClassicVariant.parse(cfg.variant)
    return run_classic(theta0, variant, cfg.c1, cfg.c2, att, cfg.objective, cfg.steps,
                       cfg.seed, backend=backend)


def run_summary(cfg: ExperimentConfig, trace: RunTrace) -> dict:
    last = trace.state(len(trace) - 1)
    summary = {
        "steps": trace.n_steps,
        "final_state": [float(v) for v in last.theta],
        "collapse_diameter": collapse_diameter(last.x),
        "diverged": bool(trace.meta.get("diverged", False)),
    }
    if trace.pg is not None:
        pg = trace.pg[-1].reshape(trace.r, trace.dim)
        summary["best_value"] = float(min(evaluate_objective(cfg.objective, p) for p in pg))
        summary["best_point"] = [float(v) for v in pg[0]]
    return summary


def _out(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    (p / "config.txt").write_text(cfg.to_text())
    return p


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(cfg: ExperimentConfig) -> int:
    out = _out(cfg)
    try:
        trace = run_swarm(cfg)
    except DivergenceError as exc:
        if exc.trace is not None:
            emit_trace_csv(exc.trace, out / "trace.csv", every=cfg.every)
        raise
    emit_trace_csv(trace, out / "trace.csv", every=cfg.every)
    emit_attractor_csv(trace, out / "attractors.csv", every=cfg.every)
    write_json(run_summary(cfg, trace), out / "summary.json")
    print(f"wrote {out / 'trace.csv'} ({len(trace)} states)")
    return 0


def cmd_ode(cfg: ExperimentConfig) -> int:
    """Integrate the limit ODE for zero attractor means; overlay one noisy run."""
    out = _out(cfg)
    p = cfg.params
    model = MeanField.linear(p)
    theta0 = initial_state(cfg)
    ode = integrate_ode(theta0, model, cfg.T, min(cfg.h, p.epsilon))
    rep = ReplicationConfig.constant_attractors(p, theta0, noise=cfg.noise_model,
                                                seed=cfg.seed)
    steps = max(1, math.ceil(cfg.T / p.epsilon - 1e-9))
    trace = run_gpso(theta0, p, rep.attractors, None, steps, cfg.seed)
    emit_trace_csv(ode, out / "ode.csv", kind="ode", every=cfg.every,
                   append_to=[(trace, "gpso")])
    summary = {
        "T": cfg.T, "h": ode.h, "epsilon": p.epsilon,
        "final_ode_state": [float(v) for v in ode.states[-1]],
        "sup_deviation": sup_deviation(trace, p.epsilon, ode)
        if abs(p.epsilon / ode.h - round(p.epsilon / ode.h)) < 1e-9 else None,
        "stable": check_stability(model.m)[0],
    }
    write_json(summary, out / "ode.json")
    print(f"wrote {out / 'ode.csv'}")
    return 0


def _lag(cfg: ExperimentConfig) -> Optional[int]:
    return None if cfg.max_lag < 0 else cfg.max_lag


def _sigma_for(cfg: ExperimentConfig, rep: ReplicationConfig) -> np.ndarray:
    if cfg.sigma == "identity":
        return np.eye(cfg.params.size)
    if cfg.sigma == "analytic":
        return analytic_sigma_iid(cfg.params, rep.theta_star, rep.attractors)
    if cfg.sigma == "mc":
        return estimate_sigma(rep.theta_star, cfg.params, rep.attractors, cfg.sigma_draws,
                              _lag(cfg), cfg.seed)
    raise ContractError(f"unknown sigma choice {cfg.sigma!r}")


def cmd_lyapunov(cfg: ExperimentConfig) -> int:
    p = cfg.params
    rep = ReplicationConfig.constant_attractors(p, noise=cfg.noise_model, seed=cfg.seed)
    a = build_M(p)
    stable, re = check_stability(a)
    if not stable:
        raise NumericalError(f"drift matrix is not stable (max real part {re.max():.4g})")
    sigma = _sigma_for(cfg, rep)
    xi = solve_lyapunov(a, sigma)
    res = lyapunov_residual(a, xi, sigma)
    np.set_printoptions(precision=10, suppress=False, linewidth=120)
    print("a =\n", a)
    print("sigma =\n", sigma)
    print("xi =\n", xi)
    print(f"residual = {res:.3e}")
    out = _out(cfg)
    write_json({"a": matrix_json(a), "sigma": matrix_json(sigma), "xi": matrix_json(xi),
                "residual": res, "eigen_real_parts": [float(v) for v in re]},
               out / "lyapunov.json")
    return 0


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def cmd_rate(cfg: ExperimentConfig) -> int:
    """Replication study for constant attractor means plus additive noise."""
    p = cfg.params
    noise = cfg.noise_model if cfg.noise != "none" else NoiseModel.gaussian()
    rep = ReplicationConfig.constant_attractors(p, noise=noise, seed=cfg.seed)
    burn = default_burn_in(p.epsilon) if cfg.burn_in < 0 else cfg.burn_in
    sigma_mc = estimate_sigma(rep.theta_star, p, rep.attractors, cfg.sigma_draws,
                              _lag(cfg), cfg.seed)
    sigma_an = analytic_sigma_iid(p, rep.theta_star, rep.attractors)
    model = DiffusionModel.build(rep.drift, sigma_mc)
    est = empirical_stationary_covariance(cfg.reps, rep, burn, jobs=cfg.jobs)
    sde = simulate_limit_sde(model, cfg.sde_T, cfg.h, cfg.sde_paths, cfg.seed)
    sde_cov = sde.pooled_covariance(cfg.sde_T / 2)
    norm = normality_diagnostic(est.samples, model.xi)
    xi_unit = solve_lyapunov(rep.drift, np.eye(p.size))
    summary = {
        "epsilon": p.epsilon, "reps": cfg.reps, "burn_in": burn,
        "n_samples": est.n_samples, "diverged": est.n_diverged,
        "sigma_mc": matrix_json(sigma_mc), "sigma_analytic": matrix_json(sigma_an),
        "sigma_mc_vs_analytic": _rel(sigma_mc, sigma_an),
        "sigma_identity_gap": _rel(np.eye(p.size), sigma_an),
        "xi": matrix_json(model.xi), "lyapunov_residual": model.residual,
        "xi_identity_sigma": matrix_json(xi_unit),
        "z_covariance": matrix_json(est.covariance),
        "z_covariance_vs_xi": _rel(est.covariance, model.xi),
        "sde_covariance": matrix_json(sde_cov),
        "sde_covariance_vs_xi": _rel(sde_cov, model.xi),
        "normality": {"k": norm.k, "n": norm.n, "mean_d2": norm.mean_d2,
                      "var_d2": norm.var_d2, "mean_ratio": norm.mean_ratio,
                      "tail": {str(q): list(v) for q, v in norm.tail.items()}},
    }
    out = _out(cfg)
    write_json(summary, out / "rate.json")
    write_table_csv(out / "z_samples.csv", [f"z_{i}" for i in range(p.size)],
                    est.samples[:: max(1, cfg.every)])
    print(f"z covariance vs xi: {summary['z_covariance_vs_xi']:.4f}; "
          f"sde vs xi: {summary['sde_covariance_vs_xi']:.4f}; "
          f"mean d2/k: {norm.mean_ratio:.4f}")
    return 0


def cmd_bench(cfg: ExperimentConfig) -> int:
    """Sweep objectives and dimensions; timings go to stdout only."""
    rows = []
    for obj in ("sphere", "rastrigin"):
        for dim in (1, 2, 5):
            for noise in ("none", "gaussian"):
                c = replace(cfg, objective=obj, dim=dim, noise=noise)
                timing = {}
                trace = None
                for be in sorted(_backend.BACKENDS):
                    t0 = time.perf_counter()
                    trace = run_swarm(c, backend=be)
                    timing[be] = time.perf_counter() - t0
                s = run_summary(c, trace)
                rows.append([obj, dim, noise, s["best_value"], s["collapse_diameter"]])
                print(f"{obj:10s} D={dim} noise={noise:8s} best={s['best_value']:.3e} "
                      f"diam={s['collapse_diameter']:.3e} "
                      + " ".join(f"{k}={v:.3f}s" for k, v in timing.items()))
    out = _out(cfg)
    write_table_csv(out / "bench.csv", ["objective", "dim", "noise", "best_value",
                                        "collapse_diameter"], rows)
    write_json({"rows": [dict(zip(["objective", "dim", "noise", "best_value",
                                   "collapse_diameter"], r)) for r in rows]},
               out / "bench.json")
    return 0


GNUPLOT = """# usage: gnuplot -p {name}.gp
set datafile separator ','
set key autotitle columnhead
set multiplot layout 2,1
set title 'trajectories'
plot for [i=3:{last}] '{name}_trajectory.csv' using 2:i with lines notitle
set title 'scaled error, first component'
plot '{name}_scaled_error.csv' using 2:3 with lines notitle
unset multiplot
"""


def cmd_repro(cfg: ExperimentConfig) -> int:
    """Sphere and Rastrigin, D in {1, 2}, five particles, additive N(0,1) noise."""
    out = _out(cfg)
    every = cfg.every
    summary = {}
    fig = 1
    for obj in ("sphere", "rastrigin"):
        for dim in (1, 2):
            name = f"fig{fig}_{obj}_d{dim}"
            noisy = replace(cfg, objective=obj, dim=dim, noise=cfg.noise
                            if cfg.noise != "none" else "gaussian:1.0")
            clean = replace(noisy, noise="none")
            entry = {}
            for label, c in (("noisy", noisy), ("noise_free", clean)):
                trace = run_swarm(c)
                s = run_summary(c, trace)
                star = equilibrium(c.params, trace.pr[-1], trace.pg[-1])
                z = scaled_errors(trace, star, 0)
                pr_f = np.array([[evaluate_objective(obj, x) for x in row.reshape(c.particles, dim)]
                                 for row in trace.pr[:: max(1, len(trace) // 1000)]])
                s["pr_monotone"] = bool(np.all(np.diff(pr_f, axis=0) <= 0))
                s["max_abs_scaled_error"] = float(np.abs(z.z).max())
                entry[label] = s
                if label == "noisy":
                    emit_trace_csv(trace, out / f"{name}_trajectory.csv", every=every)
                    write_table_csv(out / f"{name}_scaled_error.csv",
                                    ["n", "t"] + [f"z_{i}" for i in range(c.params.size)],
                                    ([k, float(trace.times[k])] + list(z.z[k])
                                     for k in range(0, len(trace), every)))
                    emit_attractor_csv(trace, out / f"fig{fig + 1}_{obj}_d{dim}_attractors.csv",
                                       every=every)
                    (out / f"{name}.gp").write_text(
                        GNUPLOT.format(name=name, last=2 + c.params.size))
            summary[f"{obj}_d{dim}"] = entry
            fig += 2
    write_json(summary, out / "repro_summary.json")
    print(f"wrote figure data to {out}")
    return 0


HANDLERS = {"run": cmd_run, "ode": cmd_ode, "rate": cmd_rate, "lyapunov": cmd_lyapunov,
            "bench": cmd_bench, "repro-paper": cmd_repro}

FLAG_KEYS = {"seed": int, "epsilon": float, "steps": int, "reps": int, "objective": str,
             "dim": int, "particles": int, "noise": str, "out": str, "jobs": int}

DEFAULTS = {
    "repro-paper": {"steps": 100000, "every": 10, "noise": "gaussian:1.0"},
    "rate": {"particles": 2, "dim": 1, "noise": "gaussian:1.0"},
    "lyapunov": {"particles": 2, "dim": 1},
    "bench": {"steps": 20000},
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sapso", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="flat key = value file")
    for key, typ in FLAG_KEYS.items():
        ap.add_argument(f"--{key}", type=typ)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override any config key")
    return ap


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig().updated(DEFAULTS.get(args.command, {}))
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ContractError(f"cannot read config: {exc}") from None
        cfg = cfg.updated(parse_kv(text))
    flags = {k: getattr(args, k) for k in FLAG_KEYS if getattr(args, k) is not None}
    flags.update(parse_kv("\n".join(args.set)))
    return cfg.updated(flags)


def run_command(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        cfg = load_config(args)
        return HANDLERS[args.command](cfg)
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ContractError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
