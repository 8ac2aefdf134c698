"""Compare the numba kernels with their numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py [--repeat 50] [--skip-epoch]

Part one times each kernel on shapes typical of training (batch 64,
4 heads, 32 tokens).  Part two runs one training epoch on a synthetic
dataset in two subprocesses, one per backend (``REDRE_DISABLE_NUMBA``).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from redre import _kernels as K

EPOCH_SCRIPT = """
import time
from redre import BACKEND
from redre.data import prepare_dataset
from redre.encoder import EncoderConfig
from redre.synthetic import generate_synthetic
from redre.training import TrainConfig, train

ds = prepare_dataset(generate_synthetic(n_entities=2000, seed=0))
cfg = EncoderConfig(input_dim=ds.feature_dim, position_mode="redre")
train(ds.train[:64], ds.valid[:64], cfg, TrainConfig(epochs=1))  # warm-up / compile
start = time.perf_counter()
train(ds.train, ds.valid, cfg, TrainConfig(epochs=1))
print(BACKEND, time.perf_counter() - start)
"""


def kernel_cases(rng):
    rows = 64 * 4 * 32  # batch x heads x tokens
    x = rng.standard_normal((rows, 8))
    ang = rng.uniform(-3, 3, (rows, 4))
    scores = rng.standard_normal((rows, 32))
    y = K._np_softmax(scores)
    hidden = rng.standard_normal((64 * 32, 32))
    _, xhat, rstd = K._np_layernorm(hidden, np.ones(32), np.zeros(32), 1e-5)
    s = np.round(rng.standard_normal(20000), 2)
    labels = (rng.random(20000) < 0.05).astype(np.int64)
    return {
        "rotate": (x, np.cos(ang), np.sin(ang)),
        "softmax": (scores,),
        "softmax_bwd": (y, rng.standard_normal(y.shape)),
        "layernorm": (hidden, np.ones(32), np.zeros(32), 1e-5),
        "layernorm_bwd": (rng.standard_normal(hidden.shape), xhat, rstd, np.ones(32)),
        "rank_auc": (s, labels),
    }


def bench_kernels(repeat: int) -> None:
    if not hasattr(K, "_nb_rotate"):
        print("numba is not installed; nothing to compare")
        return
    cases = kernel_cases(np.random.default_rng(0))
    print(f"{'kernel':<15}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, args in cases.items():
        np_fn, nb_fn = getattr(K, "_np_" + name), getattr(K, "_nb_" + name)
        nb_fn(*args)  # compile outside the timed region
        t_np = min(timeit.repeat(lambda: np_fn(*args), number=1, repeat=repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: nb_fn(*args), number=1, repeat=repeat)) * 1e3
        print(f"{name:<15}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>9.1f}x")


def bench_epoch() -> None:
    print("\none training epoch (2000 synthetic entities, default architecture, redre mode)")
    for flag in ("0", "1"):
        env = dict(os.environ, REDRE_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", EPOCH_SCRIPT], env=env, capture_output=True,
                             text=True, check=True)
        backend, seconds = out.stdout.split()
        print(f"  {backend:<8}{float(seconds):8.2f} s")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=50)
    parser.add_argument("--skip-epoch", action="store_true")
    args = parser.parse_args()
    print(f"active backend: {K.BACKEND}\n")
    bench_kernels(args.repeat)
    if not args.skip_epoch:
        bench_epoch()


if __name__ == "__main__":
    main()
