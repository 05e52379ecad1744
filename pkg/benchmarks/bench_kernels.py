"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 20]

The numba column is meaningful only when numba is importable and
PEACE_DISABLE_NUMBA is unset; compile time is excluded by a warm-up call.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from peace import kernels


def cases(rng):
    xp = rng.normal(size=(32, 16, 1250 + 6))
    out_len = (xp.shape[-1] - 7) // 2 + 1
    cols = rng.normal(size=(32, 16 * 7, out_len))
    s = rng.normal(size=20_000)
    y = (rng.random(20_000) < 0.3).astype(np.uint8)
    return {
        "im2col_1d": (kernels.im2col_1d_numpy, kernels.im2col_1d_numba, (xp, 7, 2, out_len)),
        "col2im_1d": (kernels.col2im_1d_numpy, kernels.col2im_1d_numba, (cols, 16, 7, 2, xp.shape[-1])),
        "mann_whitney_auc": (kernels.mann_whitney_auc_numpy, kernels.mann_whitney_auc_numba, (s, y)),
        "f1_at_midpoints": (kernels.f1_at_midpoints_numpy, kernels.f1_at_midpoints_numba, (s, y)),
    }


def best_of(fn, args, repeat):
    fn(*args)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def agree(a, b):
    a, b = (a, b) if isinstance(a, tuple) else ((a,), (b,))
    return all(np.allclose(u, v, rtol=0, atol=1e-9) for u, v in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    print(f"active backend: {kernels.backend()}")
    print(f"{'kernel':<18}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  agree")
    for name, (np_fn, nb_fn, a) in cases(np.random.default_rng(args.seed)).items():
        t_np, t_nb = best_of(np_fn, a, args.repeat), best_of(nb_fn, a, args.repeat)
        ok = agree(np_fn(*a), nb_fn(*a))
        print(f"{name:<18}{1e3 * t_np:>10.3f}{1e3 * t_nb:>10.3f}{t_np / t_nb:>8.1f}x  {'yes' if ok else 'NO'}")


if __name__ == "__main__":
    main()
