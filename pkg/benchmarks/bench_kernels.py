"""Compare the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Both paths are imported from the same module, so this runs regardless of
PRUNEBENCH_DISABLE_NUMBA. Numba compile time is excluded (first call is discarded).
"""
import argparse
import time

import numpy as np

from prunebench import kernels
from prunebench._accel import HAVE_NUMBA
from prunebench.model import ModelLayout, init_params
from prunebench.trainer import epoch_batches


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=2000)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    lay = ModelLayout(20, 32, 10)
    d, h, C = lay.dims
    theta0 = init_params(lay, 0).weights
    X = rng.normal(size=(args.n, d))
    y = rng.integers(0, C, args.n).astype(np.int64)
    idx = np.arange(32, dtype=np.int64)
    steps = 30 * -(-args.n // 32)
    order, starts = epoch_batches(args.n, 32, steps, np.random.default_rng(1))
    lrs = np.full(steps, 0.05)
    scores = rng.normal(size=args.n)

    def sgd(impl):
        def run():
            impl(theta0.copy(), d, h, C, X, y, order, starts, lrs, np.zeros(args.n), np.zeros(args.n, np.int64))
        return run

    def grad(impl):
        g = np.empty_like(theta0)
        return lambda: impl(theta0, d, h, C, X, y, idx, g)

    cases = [
        ("loss_grad (b=32)", grad(kernels.loss_grad_nb), grad(kernels.loss_grad_np)),
        (f"sgd_steps ({steps} steps)", sgd(kernels.sgd_steps_nb), sgd(kernels.sgd_steps_np)),
        (f"topm (N={args.n})", lambda: kernels.topm_mask_nb(scores, args.n // 4),
         lambda: kernels.topm_mask_np(scores, args.n // 4)),
    ]
    print(f"{'kernel':<24}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for name, nb, npy in cases:
        a, b = best_of(nb, args.repeat), best_of(npy, args.repeat)
        print(f"{name:<24}{a * 1e3:>10.3f}ms{b * 1e3:>10.3f}ms{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
