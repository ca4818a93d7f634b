"""Time the compiled Monte Carlo kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends consume the same random stream, so the script also checks
that their outputs agree before reporting timings.
"""
import argparse
import time

import numpy as np

from atbp import kernels
from atbp.transforms import get_family

CASES = [
    # label, kernel, units, draws, family, params, target (code, z, alpha)
    ("posterior dp/indicator", "posterior_sums", 150, 1000, "dp", (0.3,), (1, 2.0, 0.0)),
    ("posterior ss/fgt2", "posterior_sums", 150, 1000, "ss", (0.2, 1.3), (2, 2.0, 2.0)),
    ("unit means dp/indicator", "unit_means", 150, 100, "dp", (0.3,), (1, 2.0, 0.0)),
    ("unit means sdp/identity", "unit_means", 150, 100, "sdp", (0.3, 2.0), (0, 0.0, 0.0)),
]


def run(backend, kernel, theta, L, fam_args, tgt_args, seed=0):
    fn = getattr(kernels.get_backend(backend), kernel)
    gen = np.random.default_rng(seed)
    code, p0, p1 = fam_args
    tgt, z, alpha, hz = tgt_args
    if kernel == "posterior_sums":
        return fn(gen, theta, 0.1, 0.6, L, code, p0, p1, tgt, z, alpha, hz, 1e-5)
    return fn(gen, theta, 0.6, L, code, p0, p1, tgt, z, alpha, hz, 1e-5)


def best_of(repeat, f):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        f()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels._ckernels is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    print(f"{'case':28s} {'python ms':>10s} {'compiled ms':>12s} {'speed-up':>9s}")
    for label, kernel, K, L, name, tp, (tgt, z, alpha) in CASES:
        fam = get_family(name)
        theta = np.linspace(0.0, 1.5, K)
        fam_args = fam.kernel_params(tp)
        hz = fam.forward(z, tp) if tgt else 0.0
        tgt_args = (tgt, z, alpha, hz)
        a = run("python", kernel, theta, L, fam_args, tgt_args)
        b = run("compiled", kernel, theta, L, fam_args, tgt_args)
        np.testing.assert_allclose(a[0], b[0], rtol=1e-10)
        tp_ = best_of(args.repeat, lambda: run("python", kernel, theta, L, fam_args, tgt_args))
        tc = best_of(args.repeat, lambda: run("compiled", kernel, theta, L, fam_args, tgt_args))
        print(f"{label:28s} {1e3 * tp_:10.2f} {1e3 * tc:12.2f} {tp_ / tc:8.1f}x")


if __name__ == "__main__":
    main()
