"""Losses, AdamW and the tuple-by-tuple training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .dataio import Sequence, downsample, rotate_z
from .errors import ConfigError, ContractError, LabelError, TrainingError
from .mining import MiningConfig, build_ground_truth, mine_tuples
from .model import ModelConfig, Params, describe, describe_many, init_params, predict_segment
from .retrieval import evaluate_descriptors
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)


@dataclass
class LossConfig:
    margin: float = 0.5
    alpha: float = 0.5
    slc_enabled: bool = True

    def validate(self) -> "LossConfig":
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        return self


@dataclass
class OptimConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0

    def validate(self) -> "OptimConfig":
        if not (self.learning_rate > 0 and self.epsilon > 0 and self.weight_decay >= 0):
            raise ConfigError("learning_rate and epsilon must be > 0, weight_decay >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("patience and max_epochs must be >= 1")
        return self


@dataclass
class TrainConfig:
    """Input handling during training and validation."""

    num_points: int = 10000
    rotate: bool = True
    # augmentation angles are drawn from [-rotation_range, rotation_range]
    rotation_range: float = float(np.pi)
    val_seed: int = 12345


# ---------------------------------------------------------------------------
# losses


@dataclass
class TripletTerms:
    loss: Tensor
    d_ap: float
    d_an: float
    hardest: int


def lazy_triplet_loss(anchor: Tensor, positive: Tensor, negatives: Tensor, margin: float) -> TripletTerms:
    """Hinge on the positive distance against the hardest (closest) negative.

    ``anchor``/``positive`` are ``[d]``, ``negatives`` is ``[m, d]``.
    """
    if negatives.data.ndim != 2 or negatives.data.shape[0] < 1:
        raise ContractError("lazy triplet loss needs at least one negative")
    m, d = negatives.data.shape
    if anchor.shape != (d,) or positive.shape != (d,):
        raise ContractError(f"descriptor shapes differ: {anchor.shape}, {positive.shape}, {negatives.shape}")
    d_ap = T.norm(T.sub(anchor, positive))
    reps = T.reshape(anchor, (1, d)) if m == 1 else T.take(T.reshape(anchor, (1, d)), [0] * m)
    d_neg = T.norm(T.sub(reps, negatives))
    # argmin returns the first minimum, so ties go to the lowest negative index
    hardest = int(np.argmin(d_neg.data))
    d_an = T.take(d_neg, hardest)
    raw = T.shift(T.sub(d_ap, d_an), margin)
    return TripletTerms(T.relu(T.reshape(raw, (1,))), float(d_ap.data), float(d_an.data), hardest)


def slc_loss(log_probs: Tensor, labels) -> Tensor:
    """Summed negative log-likelihood; ``labels`` are 1-based segment ids."""
    labels = np.asarray(labels, dtype=np.int64)
    n, L = log_probs.data.shape
    if labels.shape != (n,):
        raise LabelError(f"{labels.shape[0]} labels for {n} predictions")
    if labels.min() < 1 or labels.max() > L:
        raise LabelError(f"segment labels must lie in 1..{L}, got {labels.min()}..{labels.max()}")
    return T.scale(T.total(T.pick(log_probs, labels - 1)), -1.0)


def combined_loss(triplet, segment, alpha: float):
    """``alpha * triplet + (1 - alpha) * segment`` for floats or tensors."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError("alpha must lie in [0, 1]")
    if isinstance(triplet, Tensor):
        return T.add(T.scale(triplet, alpha), T.scale(segment, 1.0 - alpha))
    return alpha * triplet + (1.0 - alpha) * segment


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """Adam with decoupled weight decay; moments persist across steps."""

    def __init__(self, params, config: OptimConfig):
        self.params = list(params)
        self.config = config.validate()
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        c = self.config
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient in {p.name or 'parameter'} at step {self.t + 1}")
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + c.epsilon)
            p.data = p.data - c.learning_rate * update - c.learning_rate * c.weight_decay * p.data

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}


def adamw_step(params, state: AdamW) -> None:
    state.step()


# ---------------------------------------------------------------------------
# training loop


@dataclass
class StepReport:
    loss: float
    triplet: float
    segment: float
    d_ap: float
    d_an: float


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    triplet: float
    segment: float
    val_recall_at_1: float
    d_ap: float = 0.0
    d_an: float = 0.0

    def row(self) -> list:
        return [self.epoch, self.loss, self.triplet, self.segment, self.val_recall_at_1]


HISTORY_HEADER = ["epoch", "L", "L_T", "L_S", "val_recall@1"]


@dataclass
class TrainResult:
    params: Params
    history: list[EpochRecord]
    best_epoch: int
    best_recall: float
    final_params: dict[str, np.ndarray] = field(default_factory=dict)
    num_tuples: int = 0


def tuple_loss(clouds: np.ndarray, segments, params: Params, loss_cfg: LossConfig) -> tuple[Tensor, StepReport]:
    """Loss of one tuple; ``clouds[0]`` anchor, ``clouds[1]`` positive, the rest negatives."""
    D = describe(clouds, params)
    terms = lazy_triplet_loss(T.take(D, 0), T.take(D, 1), T.take(D, list(range(2, len(clouds)))), loss_cfg.margin)
    if loss_cfg.slc_enabled:
        seg_loss = slc_loss(predict_segment(D, params), segments)
        loss = combined_loss(terms.loss, seg_loss, loss_cfg.alpha)
        seg_value = seg_loss.item()
    else:
        loss = terms.loss
        seg_value = 0.0
    return loss, StepReport(loss.item(), terms.loss.item(), seg_value, terms.d_ap, terms.d_an)


def prepare_validation(seq: Sequence, mining_cfg: MiningConfig, train_cfg: TrainConfig):
    rng = np.random.default_rng(train_cfg.val_seed)
    clouds = np.stack([downsample(c, train_cfg.num_points, rng) for c in seq.clouds()])
    gt = build_ground_truth(seq, mining_cfg, segment_aware=True)
    return clouds, seq.positions(), seq.segments(), gt


def validation_recall(params: Params, val) -> float:
    clouds, positions, segments, gt = val
    desc = describe_many(clouds, params)
    return evaluate_descriptors(desc, positions, segments, gt, ks=[1]).recall_at_1


def train(
    sequences: list[Sequence],
    val_sequence: Sequence,
    model_cfg: ModelConfig,
    mining_cfg: MiningConfig,
    loss_cfg: LossConfig,
    optim_cfg: OptimConfig,
    train_cfg: TrainConfig | None = None,
    on_epoch=None,
) -> TrainResult:
    """Train with early stopping on validation segment-aware Recall@1."""
    train_cfg = train_cfg or TrainConfig()
    loss_cfg.validate()
    optim_cfg.validate()
    mining_cfg.validate()
    needed = max(s.meta.num_segments for s in sequences)
    if loss_cfg.slc_enabled and model_cfg.num_segments < needed:
        raise ConfigError(f"segment head has {model_cfg.num_segments} outputs, data has {needed} segments")

    anchors = [mine_tuples(s, mining_cfg) for s in sequences]
    total = sum(len(a) for a in anchors)
    if total == 0:
        raise TrainingError("no training tuples: no anchor has a positive within r_th, outside the revisit window, in its segment")
    log.info("training on %d tuples from %d sequence(s)", total, len(sequences))

    params = init_params(model_cfg, optim_cfg.seed)
    opt = AdamW(params, optim_cfg)
    val = prepare_validation(val_sequence, mining_cfg, train_cfg)
    clouds = [s.clouds() for s in sequences]

    history: list[EpochRecord] = []
    best = (-1.0, 0, params.snapshot())
    stale = 0
    for epoch in range(1, optim_cfg.max_epochs + 1):
        rng = np.random.default_rng([optim_cfg.seed, epoch])
        jobs = []
        for si, seq in enumerate(sequences):
            for t in mine_tuples(seq, mining_cfg, epoch=epoch):
                jobs.append((si, t))
        order = rng.permutation(len(jobs))
        reports = []
        for j in order:
            si, tup = jobs[j]
            batch = []
            for f in tup.frames:
                pts = downsample(clouds[si][f], train_cfg.num_points, rng)
                if train_cfg.rotate:
                    pts = rotate_z(pts, rng.uniform(-train_cfg.rotation_range, train_cfg.rotation_range))
                batch.append(pts)
            opt.zero_grad()
            with Tape() as tape:
                loss, rep = tuple_loss(np.stack(batch), tup.segments, params, loss_cfg)
            tape.backward(loss)
            opt.step()
            reports.append(rep)
        recall = validation_recall(params, val)
        rec = EpochRecord(
            epoch=epoch,
            loss=float(np.mean([r.loss for r in reports])),
            triplet=float(np.mean([r.triplet for r in reports])),
            segment=float(np.mean([r.segment for r in reports])),
            val_recall_at_1=recall,
            d_ap=float(np.mean([r.d_ap for r in reports])),
            d_an=float(np.mean([r.d_an for r in reports])),
        )
        history.append(rec)
        log.info("epoch %d  L=%.4f L_T=%.4f L_S=%.4f val R@1=%.3f", epoch, rec.loss, rec.triplet, rec.segment, recall)
        if recall > best[0]:
            best = (recall, epoch, params.snapshot())
            stale = 0
        else:
            stale += 1
        if on_epoch is not None:
            on_epoch(rec, params, epoch == best[1])
        if stale >= optim_cfg.patience:
            break

    final = params.snapshot()
    params.load(best[2])
    return TrainResult(params, history, best_epoch=best[1], best_recall=best[0], final_params=final, num_tuples=total)
