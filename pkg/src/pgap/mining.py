"""Training tuples and evaluation ground truth from poses and segment labels.

A positive for anchor ``a`` is a frame ``p`` with

1. ``|pos[a] - pos[p]| <= r_th``,
2. ``p <= a - revisit_exclusion_window`` (an earlier revisit, not the scans just before),
3. ``seg[p] == seg[a]``.

Anything failing at least one of these is a negative candidate.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass
class MiningConfig:
    r_th: float = 2.0
    anchor_min_spacing: float = 0.5
    num_negatives: int = 20
    revisit_exclusion_window: int = 50
    eval_radius: float = 10.0
    seed: int = 0
    # 0 keeps every non-positive frame as a negative candidate; > 0 drops candidates this close to the anchor
    negative_min_distance: float = 0.0

    def validate(self) -> "MiningConfig":
        if not self.r_th > 0:
            raise ConfigError("r_th must be > 0")
        if self.num_negatives < 1:
            raise ConfigError("num_negatives must be >= 1")
        if self.eval_radius < self.r_th:
            raise ConfigError("eval_radius must be >= r_th")
        if self.revisit_exclusion_window < 1 or self.anchor_min_spacing < 0:
            raise ConfigError("revisit_exclusion_window must be >= 1 and anchor_min_spacing >= 0")
        return self


@dataclass
class TrainingTuple:
    anchor: int
    positive: int
    negatives: list[int]
    anchor_segment: int
    positive_segment: int
    negative_segments: list[int]

    @property
    def frames(self) -> list[int]:
        return [self.anchor, self.positive, *self.negatives]

    @property
    def segments(self) -> list[int]:
        return [self.anchor_segment, self.positive_segment, *self.negative_segments]


@dataclass
class GroundTruthTable:
    true_sets: list[np.ndarray]  # per query frame, sorted true revisit frames
    segment_aware: bool
    eval_radius: float
    window: int

    def __len__(self) -> int:
        return len(self.true_sets)

    def num_valid(self) -> int:
        return sum(len(t) > 0 for t in self.true_sets)


def _arrays(records):
    """Accept a Sequence, a list of ScanRecords, or a (positions, segments) pair."""
    if isinstance(records, tuple):
        pos, seg = records
        return np.asarray(pos, dtype=np.float64), np.asarray(seg, dtype=np.int64)
    if hasattr(records, "positions"):
        return records.positions(), records.segments()
    pos = np.stack([r.pose.position for r in records])
    seg = np.array([r.segment for r in records], dtype=np.int64)
    return pos, seg


def _dist_matrix(pos: np.ndarray) -> np.ndarray:
    return cdist(pos, pos)


def positive_mask(pos: np.ndarray, seg: np.ndarray, r_th: float, window: int) -> np.ndarray:
    """``mask[a, p]`` is True when ``p`` is a valid positive for anchor ``a``."""
    n = len(pos)
    idx = np.arange(n)
    older = idx[None, :] <= idx[:, None] - window
    return (_dist_matrix(pos) <= r_th) & older & (seg[:, None] == seg[None, :])


def _thin(anchors: np.ndarray, pos: np.ndarray, spacing: float) -> list[int]:
    kept: list[int] = []
    for a in anchors:
        if not kept or np.linalg.norm(pos[a] - pos[kept[-1]]) >= spacing:
            kept.append(int(a))
    return kept


def sample_negatives(neg_pool: np.ndarray, m: int, rng: np.random.Generator) -> list[int]:
    if m > len(neg_pool):
        raise ConfigError(f"num_negatives={m} exceeds the {len(neg_pool)} available negatives")
    return sorted(int(i) for i in rng.choice(neg_pool, size=m, replace=False))


def mine_tuples(records, config: MiningConfig, epoch: int | None = None) -> list[TrainingTuple]:
    """Anchor/closest-positive/random-negatives tuples in ascending anchor order.

    ``epoch`` selects the negative draw; anchors and positives never change.
    """
    config.validate()
    pos, seg = _arrays(records)
    ok = positive_mask(pos, seg, config.r_th, config.revisit_exclusion_window)
    has_pos = ok.any(axis=1)
    if not has_pos.any():
        log.warning("no anchor has a valid positive (%d frames checked)", len(pos))
        return []
    anchors = _thin(np.flatnonzero(has_pos), pos, config.anchor_min_spacing)
    seed = [config.seed] if epoch is None else [config.seed, epoch]
    rng = np.random.default_rng(seed)
    dist = _dist_matrix(pos)
    out = []
    for a in anchors:
        cand = np.flatnonzero(ok[a])
        # closest positive in metric space; lowest frame index breaks ties
        p = int(cand[np.lexsort((cand, dist[a, cand]))[0]])
        pool = np.flatnonzero(~ok[a] & (dist[a] >= config.negative_min_distance))
        pool = pool[pool != a]
        negs = sample_negatives(pool, config.num_negatives, rng)
        out.append(
            TrainingTuple(
                anchor=a,
                positive=p,
                negatives=negs,
                anchor_segment=int(seg[a]),
                positive_segment=int(seg[p]),
                negative_segments=[int(seg[j]) for j in negs],
            )
        )
    return out


def build_ground_truth(records, config: MiningConfig, segment_aware: bool) -> GroundTruthTable:
    """True revisits of every query: older than the window, within eval_radius, same segment if asked."""
    pos, seg = _arrays(records)
    n = len(pos)
    idx = np.arange(n)
    mask = (_dist_matrix(pos) <= config.eval_radius) & (idx[None, :] <= idx[:, None] - config.revisit_exclusion_window)
    if segment_aware:
        mask &= seg[:, None] == seg[None, :]
    return GroundTruthTable(
        true_sets=[np.flatnonzero(row) for row in mask],
        segment_aware=segment_aware,
        eval_radius=config.eval_radius,
        window=config.revisit_exclusion_window,
    )


def write_tuples_csv(path: str | Path, tuples: list[TrainingTuple]) -> None:
    m = max((len(t.negatives) for t in tuples), default=0)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["anchor", "positive", *[f"neg{j + 1}" for j in range(m)]])
        for t in tuples:
            w.writerow([t.anchor, t.positive, *t.negatives])


def write_ground_truth_csv(path: str | Path, gt: GroundTruthTable) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["query", "true"])
        for q, ts in enumerate(gt.true_sets):
            w.writerow([q, " ".join(str(int(t)) for t in ts)])
