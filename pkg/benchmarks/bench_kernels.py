"""Compiled vs pure-Python kernel timings.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Times sparse mat-vec, Cholesky factor+solve, the Kleinrock/BPR prox and a
full sgs-admm solve under each available backend, and prints a markdown
table with the speed-up of the compiled kernels.
"""

import argparse
import time

import numpy as np
import scipy.sparse as sp

from blockqp import backend
from blockqp.generators import mcf_instance
from blockqp.model import SeparableFunction, as_csc
from blockqp.prox import prox_theta
from blockqp.sgs_admm import SgsAdmmParams, solve
from blockqp.sparse import cholesky, spmv


def best_of(fn, repeat):
    out = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out = min(out, time.perf_counter() - t)
    return out


def cases(quick):
    rng = np.random.default_rng(0)
    n = 2000 if quick else 20000
    M = as_csc(sp.random(n, n, density=5.0 / n, random_state=rng))
    v = rng.standard_normal(n)
    # 2-D Laplacian-like SPD matrix
    k = 30 if quick else 80
    T = sp.diags([-1.0, 4.0, -1.0], [-1, 0, 1], shape=(k, k))
    S = as_csc(sp.kronsum(T, T) + sp.identity(k * k))
    r = rng.standard_normal(k * k)
    m = 5000 if quick else 100000
    cap = rng.uniform(1.0, 3.0, m)
    w = rng.uniform(-2.0, 2.0, m)
    kl = SeparableFunction.kleinrock(cap)
    bpr = SeparableFunction.bpr(cap, rng.uniform(0.0, 1.0, m))
    prob = mcf_instance("kleinrock", grid=(4, 4) if quick else (8, 8), N=6, seed=1)
    return [
        ("spmv", lambda K: spmv(M, v, kernels=K)),
        ("spmv adjoint", lambda K: spmv(M, v, True, K)),
        ("cholesky factor+solve", lambda K: cholesky(S, kernels=K).solve(r)),
        ("prox kleinrock", lambda K: prox_theta(kl, 1.3, w, kernels=K)),
        ("prox bpr", lambda K: prox_theta(bpr, 1.3, w, kernels=K)),
        ("sgs-admm solve", lambda K: solve(prob, SgsAdmmParams(tol=1e-5), kernels=K)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="small sizes")
    args = ap.parse_args()
    names = [n for n in ("python", "compiled") if n in backend.BACKENDS]
    print("| kernel | " + " | ".join(f"{n} [s]" for n in names) + (" | speed-up |" if len(names) == 2 else " |"))
    print("|---" * (len(names) + 1 + (len(names) == 2)) + "|")
    for label, fn in cases(args.quick):
        times = [best_of(lambda: fn(backend.BACKENDS[n]), args.repeat) for n in names]
        row = f"| {label} | " + " | ".join(f"{t:.4f}" for t in times)
        if len(names) == 2:
            row += f" | {times[0] / times[1]:.1f}x"
        print(row + " |")
    if len(names) < 2:
        print("\ncompiled extension not available; only the NumPy fallback was timed")


if __name__ == "__main__":
    main()
