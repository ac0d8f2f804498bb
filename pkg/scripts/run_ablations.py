"""Segment-loss and aggregator ablations over seeds; writes a JSON summary.

    python scripts/run_ablations.py --out results/ablations.json [--epochs 12] [--seeds 0 1 2 3 4]
"""
import argparse
import logging
from pathlib import Path

import numpy as np

from pgap.experiments import ExperimentConfig, TrialCache, aggregator_ablation, slc_ablation


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/ablations.json")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--num-points", type=int)
    ap.add_argument("--seeds", type=int, nargs="+")
    ap.add_argument("--skip-aggregators", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig()
    if args.epochs:
        cfg.max_epochs = cfg.patience = args.epochs
    if args.num_points:
        cfg.num_points = args.num_points
    if args.seeds:
        cfg.seeds = args.seeds
    cache = TrialCache(cfg)

    slc = slc_ablation(cache)
    print(f"with segment loss    R@1 {np.round(slc.with_slc, 3)} mean {slc.mean_with:.3f}")
    print(f"without segment loss R@1 {np.round(slc.without_slc, 3)} mean {slc.mean_without:.3f}")
    print(f"row-segment gain     {np.round(slc.row_gain, 3)} mean {slc.mean_row_gain:+.3f}")
    if not args.skip_aggregators:
        for agg, vals in aggregator_ablation(cache).items():
            print(f"aggregator {agg:4s}      R@1 {np.round(vals, 3)} mean {np.mean(vals):.3f}")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    cache.dump(args.out)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
