#!/usr/bin/env python3
"""Micro-benchmark: numba vs numpy kernel backends.

Times the three convolution kernels and the trilinear resize at the
desk training shape, then a full train step per backend. Run directly:

    python3 benchmarks/bench_kernels.py [--steps 5]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from vidmark import kernels
from vidmark.data import SyntheticSource
from vidmark.mapping import MappingConfig
from vidmark.model import create_bundle
from vidmark import trainer as TR


def time_call(fn, repeat=5):
    fn()  # warm (JIT compile on the numba side)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def bench_kernels(backend: str) -> dict:
    kernels.set_backend(backend)
    rng = np.random.default_rng(0)
    xp = rng.standard_normal((4, 32, 6, 34, 34)).astype(np.float32)
    w = rng.standard_normal((32, 32, 3, 3, 3)).astype(np.float32)
    stride = (1, 1, 1)
    out = kernels.conv3d_forward(xp, w, stride)
    g = np.ones_like(out)
    macs = out.size * 32 * 27
    rows = {}
    t = time_call(lambda: kernels.conv3d_forward(xp, w, stride))
    rows["conv3d_fwd"] = (t, macs / t / 1e9)
    t = time_call(lambda: kernels.conv3d_backward_input(g, w, xp.shape, stride))
    rows["conv3d_bwd_x"] = (t, macs / t / 1e9)
    t = time_call(lambda: kernels.conv3d_backward_weight(g, xp, w.shape, stride))
    rows["conv3d_bwd_w"] = (t, macs / t / 1e9)
    x = rng.standard_normal((4, 16, 16, 16, 128)).astype(np.float32)
    tabs = kernels.resize_tables((16, 16, 128), (4, 32, 32))
    t = time_call(lambda: kernels.resize3d_forward(x, (4, 32, 32), tabs))
    rows["resize3d_fwd"] = (t, np.nan)
    return rows


def bench_train_step(backend: str, steps: int) -> float:
    kernels.set_backend(backend)
    cfg = MappingConfig()
    tcfg = TR.overfit_defaults(seed=0)
    src = SyntheticSource(cfg.T, cfg.H, cfg.W, tcfg.batch_size, seed=1)
    bundle = create_bundle(cfg, seed=0)
    opt = TR.AdamW(list(bundle.named_params()), tcfg.weight_decay)
    TR.train_step(bundle, cfg, tcfg, opt, TR.make_batch(cfg, tcfg, src, 0), 0)
    t0 = time.perf_counter()
    for s in range(1, steps + 1):
        TR.train_step(bundle, cfg, tcfg, opt, TR.make_batch(cfg, tcfg, src, s), s)
    return (time.perf_counter() - t0) / steps


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"backends: {backends}")
    print(f"{'kernel':16s} " + "".join(f"{b + ' (ms | GMAC/s)':>24s}" for b in backends))
    results = {b: bench_kernels(b) for b in backends}
    for name in next(iter(results.values())):
        row = f"{name:16s} "
        for b in backends:
            t, gmacs = results[b][name]
            cell = f"{t * 1e3:8.1f} | {gmacs:6.2f}" if gmacs == gmacs else f"{t * 1e3:8.1f} |    -  "
            row += f"{cell:>24s}"
        print(row)
    print()
    for b in backends:
        t = bench_train_step(b, args.steps)
        print(f"train step ({b}): {t * 1e3:.0f} ms")
    kernels.set_backend("auto")


if __name__ == "__main__":
    main()
