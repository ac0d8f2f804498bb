"""Descriptor-extraction timing for a batch of 20 scans at several sizes.

    python scripts/benchmark.py [--reps 5] [--points 1000 4096 10000]
"""
import argparse

import numpy as np

from pgap.model import ModelConfig, init_params
from pgap.retrieval import benchmark_runtime


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--batch", type=int, default=20)
    ap.add_argument("--points", type=int, nargs="+", default=[1000, 4096, 10000])
    args = ap.parse_args()
    params = init_params(ModelConfig(), 0)
    print(f"parameters: {params.count()} total, {params.count('pointnet') + params.count('fc')} descriptor path")
    rng = np.random.default_rng(0)
    for n in args.points:
        scans = rng.normal(0.0, 5.0, (args.batch, n, 3))
        for dtype in (np.float64, np.float32):
            r = benchmark_runtime(params, scans, repetitions=args.reps, dtype=dtype)
            print(f"{n:6d} points {r.dtype:8s} {r.mean_ms:9.1f} +- {r.std_ms:6.1f} ms per batch, {r.mean_ms / args.batch:7.2f} ms per scan")


if __name__ == "__main__":
    main()
