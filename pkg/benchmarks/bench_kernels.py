#!/usr/bin/env python3
"""Benchmark the compiled kernel extension against the numpy fallback.

Times conv1d / maxpool1d forward+backward on the layer shapes the two
embedding-network schedules actually run (short synthetic inputs and the
32-band feature input), plus one full training step. Run:

    python benchmarks/bench_kernels.py [--repeats 50]
"""

import argparse
import time

import numpy as np

from perceptmetric.kernels import available_backends, get_backend


# (label, B, C_in, L, C_out, K, stride, pad)
CONV_SHAPES = [
    ("synth conv1 (B=100, 1->16, L=8)", 100, 1, 8, 16, 3, 1, 1),
    ("synth conv4 (B=100, 32->32, L=4)", 100, 32, 4, 32, 3, 1, 1),
    ("synth conv6 (B=100, 64->64, L=2)", 100, 64, 2, 64, 3, 1, 1),
    ("feature conv2 (B=384, 32->32, L=32)", 384, 32, 32, 32, 3, 1, 1),
    ("feature conv4 (B=384, 64->64, L=16)", 384, 64, 16, 64, 3, 1, 1),
    ("feature conv6 (B=384, 128->128, L=8)", 384, 128, 8, 128, 3, 1, 1),
    ("single sample (B=1, 64->64, L=16)", 1, 64, 16, 64, 3, 1, 1),
]


def time_call(fn, repeats):
    fn()  # warm-up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_conv(backend, B, Ci, L, Co, K, stride, pad, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((B, Ci, L))
    w = rng.standard_normal((Co, Ci, K))
    b = rng.standard_normal(Co)
    y = backend.conv1d_forward(x, w, b, stride, pad)
    gy = rng.standard_normal(y.shape)
    fwd = time_call(lambda: backend.conv1d_forward(x, w, b, stride, pad), repeats)
    bwd = time_call(lambda: backend.conv1d_backward(x, w, gy, stride, pad), repeats)
    return fwd, bwd


def bench_pool(backend, repeats):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((384, 64, 32))
    y, idx = backend.maxpool1d_forward(x, 2)
    gy = rng.standard_normal(y.shape)
    fwd = time_call(lambda: backend.maxpool1d_forward(x, 2), repeats)
    bwd = time_call(lambda: backend.maxpool1d_backward(gy, idx, 32), repeats)
    return fwd, bwd


def bench_train_step(backend_name, repeats):
    import os

    os.environ["PERCEPTMETRIC_KERNELS"] = backend_name
    # re-select the backend for a fresh process-like measurement
    import importlib

    import perceptmetric.kernels as kmod
    importlib.reload(kmod)
    import perceptmetric.autodiff as admod
    importlib.reload(admod)
    import perceptmetric.models as mmod
    importlib.reload(mmod)
    import perceptmetric.train_eval as temod
    importlib.reload(temod)

    from perceptmetric.data import Triplet

    rng = np.random.default_rng(2)
    feats = rng.standard_normal((100, 8))
    trips = [Triplet(int(a), int(b), int(c), "HM" if i % 2 else "LM")
             for i, (a, b, c) in enumerate(
                 rng.integers(0, 100, size=(128, 3)))
             if len({int(a), int(b), int(c)}) == 3]
    model = mmod.init_model("perceptnet", 8, seed=0)
    cfg = temod.TrainConfig(epochs=1, batch_size=128, seed=0)

    def step():
        temod.train(mmod.init_model("perceptnet", 8, seed=0), trips, feats, cfg)

    out = time_call(step, max(3, repeats // 10))
    del os.environ["PERCEPTMETRIC_KERNELS"]
    importlib.reload(kmod)
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    backends = available_backends()
    if len(backends) < 2:
        print("compiled extension not built; run "
              "`python setup.py build_ext --inplace` to compare backends")
    mods = {name: get_backend(name) for name in backends}

    print(f"{'kernel':<42}", end="")
    for name in backends:
        print(f"{name + ' fwd':>14}{name + ' bwd':>14}", end="")
    print(f"{'fwd speedup':>13}" if len(backends) == 2 else "")

    for label, *shape in CONV_SHAPES:
        times = {name: bench_conv(mods[name], *shape, args.repeats)
                 for name in backends}
        print(f"{label:<42}", end="")
        for name in backends:
            fwd, bwd = times[name]
            print(f"{fwd * 1e6:>12.0f}us{bwd * 1e6:>12.0f}us", end="")
        if len(backends) == 2:
            ratio = times[backends[0]][0] / times[backends[1]][0]
            print(f"{ratio:>12.2f}x")
        else:
            print()

    times = {name: bench_pool(mods[name], args.repeats) for name in backends}
    print(f"{'maxpool (B=384, C=64, L=32, w=2)':<42}", end="")
    for name in backends:
        fwd, bwd = times[name]
        print(f"{fwd * 1e6:>12.0f}us{bwd * 1e6:>12.0f}us", end="")
    if len(backends) == 2:
        print(f"{times[backends[0]][0] / times[backends[1]][0]:>12.2f}x")
    else:
        print()

    print("\nfull training epoch (128 triplets, 100 signals x 8):")
    for name in backends:
        t = bench_train_step(name, args.repeats)
        print(f"  {name:<10} {t * 1e3:8.1f} ms")


if __name__ == "__main__":
    main()
