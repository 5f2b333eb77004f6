"""Compare the numba kernels with their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Shapes match one training batch at the default config (8 timesteps x 8 views).
"""
import argparse
import timeit

import numpy as np

from mvhand import _accel, kernels


def cases(rng):
    B = 64
    fmap = rng.normal(size=(B, 32, 32, 16))
    coords = rng.uniform(0, 31, size=(B, 21, 2))
    grad = rng.normal(size=(B, 21, 16))
    pts = rng.uniform(0, 256, size=(B, 21, 2))
    w = rng.uniform(0, 1, size=(B, 21))
    xn = rng.normal(size=(B * 21, 8, 2))
    Ps = rng.normal(size=(B * 21, 8, 3, 4))
    wv = rng.uniform(0.5, 1, size=(B * 21, 8))
    return {
        "bilinear_forward": ((fmap, coords), kernels.bilinear_forward_numpy, kernels.bilinear_forward_jit),
        "bilinear_backward": ((fmap, coords, grad), kernels.bilinear_backward_numpy,
                              kernels.bilinear_backward_jit),
        "heatmap_patches": ((pts, w, 64, 4, 2.0), kernels.heatmap_patches_numpy, kernels.heatmap_patches_jit),
        "dlt_batch": ((xn, Ps, wv), kernels.dlt_batch_numpy, kernels.dlt_batch_jit),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba unavailable (or MVHAND_DISABLE_NUMBA=1): nothing to compare")
    print(f"{'kernel':<20}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, (a, ref, jit) in cases(np.random.default_rng(0)).items():
        jit(*a)  # compile
        t_np = min(timeit.repeat(lambda: ref(*a), number=1, repeat=args.repeat)) * 1e3
        t_jit = min(timeit.repeat(lambda: jit(*a), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<20}{t_np:>10.3f}{t_jit:>10.3f}{t_np / t_jit:>8.1f}x")


if __name__ == "__main__":
    main()
