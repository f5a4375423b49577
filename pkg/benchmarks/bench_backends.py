"""Time the compiled kernel against the pure-Python fallback.

    python3 benchmarks/bench_backends.py [--steps N] [--repeat K]

Both backends run the same tracked-attractor swarm and must produce
bit-identical traces; the script checks that before reporting timings.
"""
import argparse
import time

import numpy as np

from sapso import AttractorModel, GpsoParams, NoiseModel, RandomSource, run_gpso
from sapso import _backend


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    backends = sorted(_backend.BACKENDS)
    print(f"backends available: {', '.join(backends)} (default {_backend.DEFAULT})")
    print(f"{'objective':10s} {'D':>2s} {'r':>3s} {'noise':8s} "
          + " ".join(f"{b:>10s}" for b in backends) + "   speedup")
    for obj in ("sphere", "rastrigin"):
        for dim, r in ((1, 5), (2, 5), (10, 20)):
            for noise in (NoiseModel.none(), NoiseModel.gaussian()):
                p = GpsoParams(r=r, dim=dim)
                theta0 = RandomSource(0, r, dim).initial_state()
                att = AttractorModel.tracked(noise)
                timings, traces = {}, {}
                for be in backends:
                    timings[be], traces[be] = best_time(
                        lambda: run_gpso(theta0, p, att, obj, args.steps, 0, backend=be),
                        args.repeat)
                ref = traces[backends[0]].states
                assert all(np.array_equal(t.states, ref) for t in traces.values()), \
                    "backends disagree"
                speed = (f"{timings['python'] / timings['compiled']:8.1f}x"
                         if len(backends) == 2 else "       -")
                label = "gaussian" if noise.active else "none"
                print(f"{obj:10s} {dim:2d} {r:3d} {label:8s} "
                      + " ".join(f"{timings[b]:9.3f}s" for b in backends) + f"  {speed}")


if __name__ == "__main__":
    main()
