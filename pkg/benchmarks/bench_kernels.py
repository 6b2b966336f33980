"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 20]

Both implementations are imported from ``boaug._kernels`` regardless of
``BOAUG_DISABLE_JIT``; the first call of each compiled kernel is made before
timing so compilation is excluded.
"""
import argparse
import time

import numpy as np

from boaug import _kernels as K


def _cases(rng):
    n, d = 100, 15
    X = rng.random((n, d))
    Xq = rng.random((12, d))
    inv_ls2 = 1.0 / rng.uniform(0.2, 1.0, d) ** 2
    y = rng.normal(size=n)
    R2 = np.einsum("ijk,k->ij", (X[:, None] - X[None]) ** 2, inv_ls2)
    M = 10
    inv_ls2s = np.tile(inv_ls2, (M, 1))
    sf2s = np.ones(M)
    Kx = K.matern52_gram_numpy(X, inv_ls2, 1.0) + 1e-6 * np.eye(n)
    L_inv = np.linalg.inv(np.linalg.cholesky(Kx))
    alphas = np.tile(np.linalg.solve(Kx, y), (M, 1))
    L_invs = np.tile(L_inv, (M, 1, 1))
    imgs = rng.integers(0, 256, (64, 32, 32, 3), dtype=np.uint8)
    rot = np.array([0.94, -0.34, 6.4, 0.34, 0.94, -4.5])
    fill = np.array([128, 128, 128], np.uint8)
    return {
        "matern52_gram (n=100, d=15)": ("matern52_gram", (X, inv_ls2, 1.0)),
        "gp_lml (n=100)": ("gp_lml", (X, y, inv_ls2, 1.0, 1e-6)),
        "gp_lml_r2 (n=100)": ("gp_lml_r2", (R2, y, 1.0, 1e-6)),
        "integrated_ei (q=12, M=10)": ("integrated_ei", (Xq, X, inv_ls2s, sf2s, alphas, L_invs, -1.0)),
        "affine_warp (64 x 32x32)": ("affine_warp", (imgs, rot, fill)),
        "smooth3x3 (64 x 32x32)": ("smooth3x3", (imgs,)),
        "equalize (64 x 32x32)": ("equalize", (imgs,)),
    }


def _time(fn, args, repeat):
    fn(*args)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':32s} {'numba (ms)':>11s} {'numpy (ms)':>11s} {'speed-up':>9s}")
    for label, (name, fargs) in _cases(rng).items():
        jit = _time(getattr(K, f"{name}_jit"), fargs, args.repeat)
        ref = _time(getattr(K, f"{name}_numpy"), fargs, args.repeat)
        print(f"{label:32s} {jit * 1e3:11.3f} {ref * 1e3:11.3f} {ref / jit:8.1f}x")


if __name__ == "__main__":
    main()
