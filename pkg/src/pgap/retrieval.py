"""Descriptor database, exact KNN search and recall metrics."""
from __future__ import annotations

import csv
import json
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, LoadError

MAX_K = 25


class DescriptorDatabase:
    """Append-only store of unit descriptors in frame order."""

    def __init__(self, dim: int):
        self.dim = dim
        self._desc: list[np.ndarray] = []
        self.frames: list[int] = []
        self.positions: list[np.ndarray] = []
        self.segments: list[int] = []

    def append(self, descriptor: np.ndarray, frame: int, position=None, segment: int = 0) -> None:
        d = np.asarray(descriptor, dtype=np.float64).reshape(-1)
        if d.shape[0] != self.dim:
            raise ConfigError(f"descriptor has {d.shape[0]} dims, database holds {self.dim}")
        if self.frames and frame <= self.frames[-1]:
            raise ConfigError(f"frame {frame} appended after frame {self.frames[-1]}")
        if abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise ConfigError(f"frame {frame}: descriptor is not unit norm")
        self._desc.append(d)
        self.frames.append(int(frame))
        self.positions.append(np.zeros(3) if position is None else np.asarray(position, dtype=np.float64))
        self.segments.append(int(segment))

    @classmethod
    def from_arrays(cls, descriptors: np.ndarray, positions=None, segments=None) -> "DescriptorDatabase":
        db = cls(descriptors.shape[1])
        for i, d in enumerate(descriptors):
            db.append(
                d,
                i,
                None if positions is None else positions[i],
                0 if segments is None else int(segments[i]),
            )
        return db

    @property
    def matrix(self) -> np.ndarray:
        return np.stack(self._desc) if self._desc else np.zeros((0, self.dim))

    def __len__(self) -> int:
        return len(self._desc)


def knn(db, query: np.ndarray, k: int, candidate_mask: np.ndarray | None = None) -> list[tuple[int, float]]:
    """Exhaustive k nearest neighbours by Euclidean distance; ties go to the lower frame.

    Returns an empty list when the mask selects no candidate.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    M = db.matrix if isinstance(db, DescriptorDatabase) else np.asarray(db)
    frames = np.asarray(db.frames) if isinstance(db, DescriptorDatabase) else np.arange(len(M))
    cand = np.arange(len(M)) if candidate_mask is None else np.flatnonzero(candidate_mask)
    if len(cand) == 0:
        return []
    diff = M[cand] - np.asarray(query, dtype=np.float64)
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    order = np.lexsort((frames[cand], dist))[:k]
    return [(int(frames[cand[i]]), float(dist[i])) for i in order]


@dataclass
class RecallReport:
    recall_at_k: dict[int, float]
    recall_at_1pct: float
    segment_recall_at_1: dict[int, float]
    num_queries: int
    num_skipped: int
    true_positive: str
    segment_query_counts: dict[int, int] = field(default_factory=dict)

    @property
    def recall_at_1(self) -> float:
        return self.recall_at_k[1]

    def to_json(self) -> dict:
        d = asdict(self)
        d["recall_at_k"] = {str(k): v for k, v in self.recall_at_k.items()}
        d["segment_recall_at_1"] = {str(k): v for k, v in self.segment_recall_at_1.items()}
        d["segment_query_counts"] = {str(k): v for k, v in self.segment_query_counts.items()}
        return d

    def write(self, out: str | Path) -> dict[str, Path]:
        """Write ``<out>.json``, ``<out>_recall.csv`` and ``<out>_segments.csv``."""
        out = Path(out)
        base = out.with_suffix("") if out.suffix == ".json" else out
        paths = {
            "json": base.with_name(base.name + ".json"),
            "recall": base.with_name(base.name + "_recall.csv"),
            "segments": base.with_name(base.name + "_segments.csv"),
        }
        paths["json"].write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        with open(paths["recall"], "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["k", "recall"])
            for k, v in self.recall_at_k.items():
                w.writerow([k, repr(v)])
            w.writerow(["1%", repr(self.recall_at_1pct)])
        with open(paths["segments"], "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["segment", "queries", "recall@1"])
            for s, v in self.segment_recall_at_1.items():
                w.writerow([s, self.segment_query_counts.get(s, 0), repr(v)])
        return paths


def candidate_mask(num_frames: int, query: int, window: int) -> np.ndarray:
    """Incremental-map database: frames older than the query by at least ``window``."""
    mask = np.zeros(num_frames, dtype=bool)
    mask[: max(0, query - window + 1)] = True
    return mask


def evaluate(
    db: DescriptorDatabase,
    queries: np.ndarray,
    ground_truth,
    ks=range(1, MAX_K + 1),
    segment_aware: bool | None = None,
    query_segments=None,
) -> RecallReport:
    """Recall@k, Recall@1% and per-segment Recall@1 over every frame used as a query.

    ``queries[i]`` is the descriptor of frame ``i`` and is matched against the
    database frames older than ``i`` by at least the ground-truth window.
    """
    if segment_aware is not None and segment_aware != ground_truth.segment_aware:
        raise ConfigError(
            f"ground truth built with segment_aware={ground_truth.segment_aware}, "
            f"evaluation requested segment_aware={segment_aware}"
        )
    ks = sorted(set(int(k) for k in ks))
    kmax = max(ks)
    segs = np.asarray(db.segments if query_segments is None else query_segments)
    hits = {k: 0 for k in ks}
    hit_1pct = 0
    seg_hits: dict[int, int] = {}
    seg_count: dict[int, int] = {}
    used = skipped = 0
    n_db = len(db)
    for q, truth in enumerate(ground_truth.true_sets):
        if len(truth) == 0:
            skipped += 1
            continue
        mask = candidate_mask(n_db, q, ground_truth.window)
        n_cand = int(mask.sum())
        k1 = max(1, math.ceil(0.01 * n_cand))
        ranked = knn(db, queries[q], max(kmax, k1), mask)
        if not ranked:
            skipped += 1
            continue
        used += 1
        truth_set = set(int(t) for t in truth)
        first = next((r for r, (f, _) in enumerate(ranked) if f in truth_set), None)
        for k in ks:
            hits[k] += first is not None and first < k
        hit_1pct += first is not None and first < k1
        s = int(segs[q])
        seg_count[s] = seg_count.get(s, 0) + 1
        seg_hits[s] = seg_hits.get(s, 0) + (first == 0)
    denom = max(used, 1)
    tp = "within {:g} m{}".format(ground_truth.eval_radius, " and same segment" if ground_truth.segment_aware else "")
    return RecallReport(
        recall_at_k={k: hits[k] / denom for k in ks},
        recall_at_1pct=hit_1pct / denom,
        segment_recall_at_1={s: seg_hits[s] / seg_count[s] for s in sorted(seg_count)},
        num_queries=used,
        num_skipped=skipped,
        true_positive=tp,
        segment_query_counts=dict(sorted(seg_count.items())),
    )


def evaluate_descriptors(descriptors: np.ndarray, positions, segments, ground_truth, **kw) -> RecallReport:
    db = DescriptorDatabase.from_arrays(descriptors, positions, segments)
    return evaluate(db, descriptors, ground_truth, **kw)


# ---------------------------------------------------------------------------
# descriptor dumps
#
# magic b"PGAPDESC" | u32 LE header length | UTF-8 JSON {dim, count, sequence}
# | count x dim float32 LE rows

DESC_MAGIC = b"PGAPDESC"


def save_descriptors(path: str | Path, descriptors: np.ndarray, sequence: str) -> None:
    header = json.dumps({"dim": int(descriptors.shape[1]), "count": int(descriptors.shape[0]), "sequence": sequence}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(DESC_MAGIC + struct.pack("<I", len(header)) + header)
        f.write(np.ascontiguousarray(descriptors, dtype="<f4").tobytes())


def load_descriptors(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"missing descriptor file: {path}")
    raw = path.read_bytes()
    if raw[:8] != DESC_MAGIC:
        raise DataError(f"{path}: not a descriptor dump")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen])
    body = raw[12 + hlen :]
    if len(body) != header["count"] * header["dim"] * 4:
        raise DataError(f"{path}: body size does not match header")
    return np.frombuffer(body, dtype="<f4").reshape(header["count"], header["dim"]), header


# ---------------------------------------------------------------------------
# runtime


@dataclass
class RuntimeReport:
    mean_ms: float
    std_ms: float
    repetitions: int
    batch_size: int
    num_points: int
    param_count: int
    descriptor_param_count: int
    dtype: str

    def to_json(self) -> dict:
        return asdict(self)


def benchmark_runtime(params, scans: np.ndarray, repetitions: int = 10, warmup: int = 1, dtype=np.float64) -> RuntimeReport:
    """Wall-clock time of descriptor extraction for one batch; retrieval is not timed."""
    from .model import describe, Params

    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    run_params = params
    if dtype != np.float64:
        run_params = Params(params.config, {n: _cast(params[n], dtype) for n in params.names()})
    batch = np.asarray(scans, dtype=dtype)
    for _ in range(warmup):
        describe(batch, run_params)
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        describe(batch, run_params)
        times.append((time.perf_counter() - t0) * 1e3)
    times = np.array(times)
    return RuntimeReport(
        mean_ms=float(times.mean()),
        std_ms=float(times.std(ddof=1)) if repetitions > 1 else 0.0,
        repetitions=repetitions,
        batch_size=int(batch.shape[0]),
        num_points=int(batch.shape[1]),
        param_count=params.count(),
        descriptor_param_count=params.count("pointnet") + params.count("fc"),
        dtype=np.dtype(dtype).name,
    )


def _cast(p, dtype):
    from .tensor import Parameter

    return Parameter(p.data.astype(dtype), name=p.name)
