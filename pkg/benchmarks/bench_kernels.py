"""Time each numba kernel against its numpy twin and check they agree.

Run:  python3 benchmarks/bench_kernels.py [--repeats N]
The numba versions are warmed up once so compile time is not counted.
"""

import argparse
import time

import numpy as np

from ican import kernels as K
from ican._accel import NUMBA_AVAILABLE


def best_of(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(rng):
    x = rng.standard_normal((64, 34, 34))  # padded 32x32 map, 3x3 kernel
    yield "im2col 64x32x32 k3", K.im2col_np, K.im2col_nb, (x, 3, 1, 32, 32)
    cols = rng.standard_normal((64 * 9, 32 * 32))
    yield "col2im 64x32x32 k3", K.col2im_np, K.col2im_nb, (cols, 64, 34, 34, 3, 1, 32, 32)
    fmap = rng.standard_normal((256, 32, 32))
    edges = np.linspace(0, 28, 8).astype(np.int64)
    bins = np.stack([edges[:-1], edges[1:] + 1], axis=1)
    yield "roi_max_pool 256ch 7x7", K.roi_max_pool_np, K.roi_max_pool_nb, (fmap, bins, bins)
    _, arg = K.roi_max_pool_np(fmap, bins, bins)
    grad = rng.standard_normal(arg.shape)
    yield "scatter_argmax 256ch", K.scatter_argmax_np, K.scatter_argmax_nb, (grad, arg, 32, 32)
    yield "max_pool 64x64x64 /2", K.max_pool_np, K.max_pool_nb, (rng.standard_normal((64, 64, 64)), 2)
    a = rng.uniform(0, 100, (300, 4))
    a[:, 2:] += a[:, :2] + 1
    b = rng.uniform(0, 100, (300, 4))
    b[:, 2:] += b[:, :2] + 1
    yield "iou_matrix 300x300", K.iou_matrix_np, K.iou_matrix_nb, (a, b)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    if not NUMBA_AVAILABLE:
        print("numba is not installed; only the numpy path exists")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26} {'numpy s':>10} {'numba s':>10} {'speedup':>8}  agree")
    for name, f_np, f_nb, fargs in cases(rng):
        f_nb(*fargs)
        t_np, out_np = best_of(f_np, fargs, args.repeats)
        t_nb, out_nb = best_of(f_nb, fargs, args.repeats)
        if isinstance(out_np, tuple):
            agree = all(np.array_equal(p, q) for p, q in zip(out_np, out_nb))
        else:
            agree = np.allclose(out_np, out_nb, rtol=0, atol=1e-12)
        print(f"{name:<26} {t_np:>10.5f} {t_nb:>10.5f} {t_np / t_nb:>8.1f}  {agree}")


if __name__ == "__main__":
    main()
