"""Recall of an untrained network against a bird's-eye occupancy histogram.

A sanity check on the synthetic benchmark: if a fixed 16x16 histogram retrieves
places well, the scans carry enough information and a weak learned descriptor
is the model's limitation, not the data's.
"""
import argparse

import numpy as np

from pgap.dataio import downsample
from pgap.experiments import orchard_pair
from pgap.mining import MiningConfig, build_ground_truth
from pgap.model import ModelConfig, describe_many, init_params
from pgap.retrieval import evaluate_descriptors
from pgap.synthgen import OrchardSpec


def histogram(points, extent, bins=16):
    h, _, _ = np.histogram2d(points[:, 0], points[:, 1], bins=bins, range=[[-extent, extent], [-extent, extent]])
    h = h.ravel() + 1e-9
    return h / np.linalg.norm(h)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, nargs="+", default=[256, 1024])
    args = ap.parse_args()
    spec = OrchardSpec()
    _, val = orchard_pair(spec)
    gt = build_ground_truth(val, MiningConfig(), segment_aware=True)
    params = init_params(ModelConfig(num_segments=spec.num_segments), 0)
    for n in args.points:
        rng = np.random.default_rng(0)
        clouds = np.stack([downsample(c, n, rng) for c in val.clouds()])
        for name, desc in (
            ("histogram", np.stack([histogram(c, spec.sensor_range) for c in clouds])),
            ("untrained net", describe_many(clouds, params)),
        ):
            rep = evaluate_descriptors(desc, val.positions(), val.segments(), gt)
            segs = " ".join(f"{s}:{v:.2f}" for s, v in rep.segment_recall_at_1.items())
            print(f"{n:5d} points  {name:14s} R@1 {rep.recall_at_1:.3f}  per segment {segs}")


if __name__ == "__main__":
    main()
