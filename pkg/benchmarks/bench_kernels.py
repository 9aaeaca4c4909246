"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--size N] [--repeat R] [--epochs E]

Prints one line per kernel with the median time of each backend and the
speedup, followed by a short end-to-end training run on synthetic ratings.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from flexencoder import kernels
from flexencoder.config import ModelConfig
from flexencoder.data import from_triples, pivot, compute_means
from flexencoder.model import build_model
from flexencoder.nn import Activation
from flexencoder.trainer import fit


def _median_time(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def kernel_cases(size: int):
    rng = np.random.default_rng(0)
    w = rng.standard_normal(size).astype(np.float32)
    g = rng.standard_normal(size).astype(np.float32)
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    acc = np.zeros_like(w)
    z = rng.standard_normal((size // 1024, 1024)).astype(np.float32)
    delta = np.ones_like(z)
    mask = (rng.random(size) < 0.05).astype(np.float32)
    return {
        "sgd_step": lambda: kernels.sgd_step(w, g, 1e-3, 1e-3),
        "adam_step": lambda: kernels.adam_step(w, g, m, v, 1e-3, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001),
        "adagrad_step": lambda: kernels.adagrad_step(w, g, acc, 1e-3, 1e-3, 1e-8),
        "rmsprop_step": lambda: kernels.rmsprop_step(w, g, acc, 1e-3, 1e-3, 0.9, 1e-8),
        "act_forward[RELU]": lambda: kernels.act_forward(Activation.RELU, z),
        "act_backward[RELU]": lambda: kernels.act_backward(Activation.RELU, z, delta),
        "act_forward[LRELU]": lambda: kernels.act_forward(Activation.LRELU, z),
        "act_forward[SELU]": lambda: kernels.act_forward(Activation.SELU, z),
        "act_backward[SELU]": lambda: kernels.act_backward(Activation.SELU, z, delta),
        "act_forward[SIGMOID]": lambda: kernels.act_forward(Activation.SIGMOID, z),
        "act_forward[SWISH]": lambda: kernels.act_forward(Activation.SWISH, z),
        "masked_sq_sum": lambda: kernels.masked_sq_sum(w, g, mask),
    }


def synthetic_table(users: int, items: int, density: float, seed: int = 0):
    rng = np.random.default_rng(seed)
    n = int(users * items * density)
    u = rng.integers(0, users, n)
    i = rng.integers(0, items, n)
    r = rng.integers(2, 11, n) / 2.0
    return from_triples(u, i, r, None)


def end_to_end(epochs: int) -> float:
    table = synthetic_table(900, 1600, 0.06)
    train = pivot(table, (0, 1))
    config = ModelConfig(hidden_layers=(512, 256), activation="SELU", optimizer="ADAM", epochs=epochs)
    model = build_model(config, train.n_cols)
    t0 = time.perf_counter()
    fit(model, config, train, compute_means(train))
    return time.perf_counter() - t0


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=1 << 20)
    ap.add_argument("--repeat", type=int, default=15)
    ap.add_argument("--epochs", type=int, default=2)
    args = ap.parse_args()

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy fallback is available")
    print(f"{'kernel':22s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    for name, fn in kernel_cases(args.size).items():
        row = []
        for b in backends:
            with kernels.backend(b):
                fn()  # warm up
                row.append(_median_time(fn, args.repeat))
        speed = f"{row[0] / row[-1]:10.2f}x" if len(row) == 2 else ""
        print(f"{name:22s}" + "".join(f"{t * 1e3:10.2f}ms" for t in row) + speed)

    print(f"\nend-to-end fit, 900x1600 synthetic, [512,256] ADAM/SELU, {args.epochs} epochs")
    for b in backends:
        with kernels.backend(b):
            print(f"  {b:8s} {end_to_end(args.epochs):.2f}s")


if __name__ == "__main__":
    main()
