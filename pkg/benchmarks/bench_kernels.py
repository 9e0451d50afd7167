"""Time the numpy and numba kernel backends at case-study sizes.

    python3 benchmarks/bench_kernels.py             # kernels only
    python3 benchmarks/bench_kernels.py --pipeline  # also the full run per backend

The kernel timings call both implementations directly through
``kernels.BACKENDS``; ``--pipeline`` re-runs the reference experiment in a
subprocess with ``WMCAL_NUMBA=0`` and ``=1`` so the env switch itself is used.
"""
import argparse
import os
import subprocess
import sys
import timeit
from pathlib import Path

import numpy as np

from wmcal import kernels

ROOT = Path(__file__).resolve().parents[1]
N_PATHS, N_DATES, N_STRIKES, N_WINDOWS, N_CONSTRAINTS = 20000, 7, 15, 40, 226


def cases(rng):
    normals = rng.standard_normal((N_PATHS, N_DATES))
    spots = kernels.BACKENDS["numpy"]["lognormal_paths"](
        10007.0, np.full(N_DATES, -0.02), np.full(N_DATES, 0.2), normals)
    edges = np.linspace(3500, 22500, N_WINDOWS + 1)
    g = rng.standard_normal((N_PATHS, N_CONSTRAINTS))
    p = rng.dirichlet(np.ones(N_PATHS))
    strikes = np.linspace(5000, 15000, N_STRIKES)
    return {
        "lognormal_paths": (10007.0, np.full(N_DATES, -0.02), np.full(N_DATES, 0.2), normals),
        "vanilla_payoffs": (spots[:, 3], strikes, strikes > 10000, 0.9),
        "window_payoffs": (spots[:, 3], spots[:, 4], 1.0, edges[:-1].copy(), edges[1:].copy()),
        "cliquet_payoffs": (spots, 1.1, 0.85),
        "softmax_weights": (g @ rng.normal(scale=0.1, size=N_CONSTRAINTS),),
        "weighted_moments": (g, p),
    }


def bench_kernels(repeat):
    args = cases(np.random.default_rng(0))
    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, a in args.items():
        fns = {b: kernels.BACKENDS[b][name] for b in ("numpy", "numba")}
        fns["numba"](*a)  # compile outside the timing
        out_np, out_nb = fns["numpy"](*a), fns["numba"](*a)
        for x, y in zip(np.atleast_1d(out_np) if not isinstance(out_np, tuple) else out_np,
                        np.atleast_1d(out_nb) if not isinstance(out_nb, tuple) else out_nb):
            np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)
        t = {b: min(timeit.repeat(lambda f=f: f(*a), number=1, repeat=repeat)) * 1e3
             for b, f in fns.items()}
        print(f"{name:<18}{t['numpy']:>12.2f}{t['numba']:>12.2f}{t['numpy'] / t['numba']:>10.1f}x")


def bench_pipeline():
    code = ("import time; from wmcal import cli, kernels; "
            "cfg = cli.load_config('configs/ibex_cliquet.json'); cli.run(cfg); "
            "t = time.perf_counter(); r = cli.run(cfg); "
            "print(kernels.ACTIVE_BACKEND, f'{time.perf_counter() - t:.2f}s', r.prices)")
    for flag in ("0", "1"):
        env = dict(os.environ, WMCAL_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], cwd=ROOT, env=env,
                             capture_output=True, text=True, check=True)
        print("pipeline", out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--pipeline", action="store_true")
    args = ap.parse_args()
    bench_kernels(args.repeat)
    if args.pipeline:
        bench_pipeline()


if __name__ == "__main__":
    main()
