"""Seeded desk-scale training experiments: segment-loss and aggregator ablations.

Each trial trains on the default orchard and is scored on a second traversal of
the same orchard (same trees, different trajectory jitter and sensor noise).
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataio import Sequence
from .mining import MiningConfig, build_ground_truth
from .model import ModelConfig, describe_many
from .retrieval import evaluate_descriptors
from .synthgen import OrchardSpec, generate
from .training import LossConfig, OptimConfig, TrainConfig, prepare_validation, train

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    max_epochs: int = 25
    patience: int = 25
    learning_rate: float = 1e-3
    num_points: int = 256
    rotate: bool = False
    negative_min_distance: float = 0.0
    alpha: float = 0.5
    orchard: OrchardSpec = field(default_factory=OrchardSpec)
    val_traversal_seed: int = 1


@dataclass
class Trial:
    seed: int
    slc: bool
    aggregator: str
    recall_at_1: float
    row_recall_at_1: float
    segment_recall_at_1: dict[int, float]
    best_epoch: int
    epochs_run: int
    seconds: float
    history: list[list] = field(default_factory=list)


def orchard_pair(spec: OrchardSpec, val_traversal_seed: int = 1) -> tuple[Sequence, Sequence]:
    """Training traversal and a second traversal of the same trees for validation."""
    train_seq = generate(spec)
    val_seq = generate(replace(spec, seed=val_traversal_seed, map_seed=spec.map_seed if spec.map_seed is not None else spec.seed))
    return train_seq, val_seq


def row_mean(segment_recall: dict[int, float], rows: int) -> float:
    vals = [v for s, v in segment_recall.items() if 1 <= s <= rows]
    return float(np.mean(vals)) if vals else 0.0


def run_trial(cfg: ExperimentConfig, data, seed: int, *, slc: bool = True, aggregator: str = "both") -> Trial:
    train_seq, val_seq = data
    mining = MiningConfig(seed=seed, negative_min_distance=cfg.negative_min_distance)
    tcfg = TrainConfig(num_points=cfg.num_points, rotate=cfg.rotate)
    t0 = time.perf_counter()
    result = train(
        [train_seq],
        val_seq,
        ModelConfig(num_segments=train_seq.meta.num_segments, aggregator=aggregator),
        mining,
        LossConfig(alpha=cfg.alpha, slc_enabled=slc),
        OptimConfig(learning_rate=cfg.learning_rate, max_epochs=cfg.max_epochs, patience=cfg.patience, seed=seed),
        tcfg,
    )
    seconds = time.perf_counter() - t0
    clouds, positions, segments, _ = prepare_validation(val_seq, mining, tcfg)
    gt = build_ground_truth(val_seq, mining, segment_aware=True)
    report = evaluate_descriptors(describe_many(clouds, result.params), positions, segments, gt)
    trial = Trial(
        seed=seed,
        slc=slc,
        aggregator=aggregator,
        recall_at_1=report.recall_at_1,
        row_recall_at_1=row_mean(report.segment_recall_at_1, cfg.orchard.rows),
        segment_recall_at_1=report.segment_recall_at_1,
        best_epoch=result.best_epoch,
        epochs_run=len(result.history),
        seconds=seconds,
        history=[r.row() for r in result.history],
    )
    log.info("seed %d slc=%s agg=%s: R@1 %.3f rows %.3f (%.0f s)", seed, slc, aggregator, trial.recall_at_1, trial.row_recall_at_1, seconds)
    return trial


class TrialCache:
    """Runs each (seed, slc, aggregator) trial once and remembers it."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.data = orchard_pair(cfg.orchard, cfg.val_traversal_seed)
        self.trials: dict[tuple, Trial] = {}

    def get(self, seed: int, slc: bool = True, aggregator: str = "both") -> Trial:
        key = (seed, slc, aggregator)
        if key not in self.trials:
            self.trials[key] = run_trial(self.cfg, self.data, seed, slc=slc, aggregator=aggregator)
        return self.trials[key]

    def dump(self, path: str | Path) -> None:
        out = {"config": asdict(self.cfg), "trials": [asdict(t) for t in self.trials.values()]}
        Path(path).write_text(json.dumps(out, indent=2, sort_keys=True, default=str) + "\n")


@dataclass
class SlcSummary:
    with_slc: list[float]
    without_slc: list[float]
    row_gain: list[float]

    @property
    def mean_with(self) -> float:
        return float(np.mean(self.with_slc))

    @property
    def mean_without(self) -> float:
        return float(np.mean(self.without_slc))

    @property
    def mean_row_gain(self) -> float:
        return float(np.mean(self.row_gain))


def slc_ablation(cache: TrialCache) -> SlcSummary:
    on = [cache.get(s, True) for s in cache.cfg.seeds]
    off = [cache.get(s, False) for s in cache.cfg.seeds]
    return SlcSummary(
        with_slc=[t.recall_at_1 for t in on],
        without_slc=[t.recall_at_1 for t in off],
        row_gain=[a.row_recall_at_1 - b.row_recall_at_1 for a, b in zip(on, off)],
    )


def aggregator_ablation(cache: TrialCache) -> dict[str, list[float]]:
    return {agg: [cache.get(s, True, agg).recall_at_1 for s in cache.cfg.seeds] for agg in ("both", "gap", "pfi")}
