"""Benchmark the numba-compiled kernels against their pure-numpy twins.

Run:  python benchmarks/bench_kernels.py [--repeats N]

Shapes mirror real training traffic: batches of 64 through a 300-wide
stack (Adam updates over ~190k parameters, losses over (64, 2) heads with
50 noise draws).  Also times one full training epoch under each backend.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from uqcurate import kernels
from uqcurate.data import SyntheticSpec, generate_synthetic, split, SplitSpec, undersample_balance
from uqcurate.models import MlpModel, ModelConfig, train_model
from uqcurate.nncore import make_rng


def time_fn(fn, args, repeats):
    fn(*args)  # warm (JIT compile / cache load)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def bench_kernels(repeats: int):
    rng = np.random.default_rng(0)
    n_params = 186_902  # 20->300->300->300 stack with dual heads
    adam_args = lambda: (
        rng.standard_normal(n_params), rng.standard_normal(n_params),
        np.zeros(n_params), np.zeros(n_params), 3, 1e-3, 0.9, 0.999, 1e-8,
    )
    logits = rng.standard_normal((64, 2))
    labels = rng.integers(0, 2, 64).astype(np.int64)
    mu = np.abs(rng.standard_normal((64, 2)))
    sigma = rng.uniform(0.1, 1.5, (64, 2))
    eps = rng.standard_normal((64, 50, 2))

    cases = [
        ("adam_update (190k params)",
         kernels.adam_update_numpy, kernels.adam_update_numba, adam_args()),
        ("softmax_xent (64x2)",
         kernels.softmax_xent_numpy, kernels.softmax_xent_numba, (logits, labels)),
        ("gaussian_logit_nll (64x50x2)",
         kernels.gaussian_logit_nll_numpy, kernels.gaussian_logit_nll_numba,
         (mu, sigma, eps, labels)),
    ]

    print(f"{'kernel':34s} {'numpy':>12s} {'numba':>12s} {'speedup':>9s}")
    for name, fn_np, fn_nb, args in cases:
        t_np = time_fn(fn_np, args, repeats)
        if fn_nb is None:
            print(f"{name:34s} {t_np*1e6:10.1f}us {'n/a':>12s} {'n/a':>9s}")
            continue
        t_nb = time_fn(fn_nb, args, repeats)
        print(f"{name:34s} {t_np*1e6:10.1f}us {t_nb*1e6:10.1f}us {t_np/t_nb:8.2f}x")


def bench_training():
    spec = SyntheticSpec(n_instances=1000, feature_dim=20)
    ds = generate_synthetic(spec, make_rng(0))
    train, val, _ = split(ds, SplitSpec(seed=1))
    balanced = undersample_balance(train, make_rng(2))
    cfg = ModelConfig(input_dim=20, head="hetero", max_epochs=5, patience=5)
    model = MlpModel(cfg, seed=0)
    t0 = time.perf_counter()
    train_model(model, balanced.X, balanced.y, val.X, val.y)
    dt = time.perf_counter() - t0
    print(f"\n5-epoch dual-head fit (3x300, {len(balanced)} instances) "
          f"[{kernels.backend()} backend]: {dt:.2f}s")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    print(f"active backend: {kernels.backend()}  "
          "(set UQCURATE_NUMBA=0 to force the numpy path)\n")
    bench_kernels(args.repeats)
    bench_training()
