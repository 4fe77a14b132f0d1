"""Time the numba and numpy rotated-IoU kernels side by side.

    python benchmarks/bench_kernels.py [--pairs 100000] [--repeat 3]

Setting HIERCL_NO_NUMBA=1 turns the numba kernels into plain Python; the
script then reports that instead of timing them.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from hiercl import _kernels as K
from hiercl._accel import NUMBA_ENABLED


def random_boxes(rng, n):
    return np.column_stack([
        rng.uniform(-1, 1, n), rng.uniform(-1, 1, n),
        rng.uniform(0.2, 2, n), rng.uniform(0.2, 2, n),
        rng.uniform(-np.pi / 2, np.pi / 2, n),
    ])


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pairs", type=int, default=100_000)
    ap.add_argument("--matrix", type=int, default=300)
    ap.add_argument("--raster-pairs", type=int, default=200)
    ap.add_argument("--raster-side", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    A, B = random_boxes(rng, args.pairs), random_boxes(rng, args.pairs)
    MA, MB = random_boxes(rng, args.matrix), random_boxes(rng, args.matrix)
    RA, RB = A[: args.raster_pairs], B[: args.raster_pairs]

    cases = [
        (f"iou_pairs n={args.pairs}", K.iou_pairs_numba, K.iou_pairs_numpy, (A, B)),
        (f"iou_matrix {args.matrix}x{args.matrix}", K.iou_matrix_numba, K.iou_matrix_numpy, (MA, MB)),
        (f"raster n={args.raster_pairs} side={args.raster_side}", K.raster_iou_pairs_numba,
         K.raster_iou_pairs_numpy, (RA, RB, args.raster_side)),
    ]
    if not NUMBA_ENABLED:
        print("numba disabled (HIERCL_NO_NUMBA set); timing the numpy kernels only")
    print(f"{'kernel':<34}{'numba s':>10}{'numpy s':>10}{'speedup':>9}{'max |diff|':>12}")
    for name, nb, npy, inputs in cases:
        t_np, out_np = best_of(lambda: npy(*inputs), args.repeat)
        if NUMBA_ENABLED:
            nb(*(x[:2] if isinstance(x, np.ndarray) else x for x in inputs))  # compile
            t_nb, out_nb = best_of(lambda: nb(*inputs), args.repeat)
            diff = float(np.max(np.abs(out_nb - out_np)))
            print(f"{name:<34}{t_nb:>10.4f}{t_np:>10.4f}{t_np / t_nb:>9.1f}{diff:>12.2e}")
        else:
            print(f"{name:<34}{'-':>10}{t_np:>10.4f}{'-':>9}{'-':>12}")


if __name__ == "__main__":
    main()
