"""Sequence directories on disk, plus scan downsampling and augmentation.

Layout of a sequence directory::

    scans/000000.bin   float32 little-endian, stride 4 (x, y, z, intensity)
    poses.txt          12 floats per line, row-major 3x4 [R|t]
    segments.csv       header ``frame,segment``; segments are 1-based
    times.txt          optional, one float (seconds) per line
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, EmptyInputError, InputError, LoadError, ParseError

SCAN_DTYPE = np.dtype("<f4")


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (n, 3) meters, sensor frame
    frame_index: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InputError(f"point cloud must be (n, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise EmptyInputError(f"frame {self.frame_index}: empty point cloud")
        if not np.all(np.isfinite(pts)):
            raise InputError(f"frame {self.frame_index}: non-finite coordinates")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Pose:
    position: np.ndarray  # (3,)
    rotation: np.ndarray  # (3, 3)

    def __post_init__(self):
        if abs(np.linalg.det(self.rotation) - 1.0) > 1e-6:
            raise InputError(f"rotation is not proper (det={np.linalg.det(self.rotation):.9f})")

    def matrix(self) -> np.ndarray:
        return np.hstack([self.rotation, self.position.reshape(3, 1)])

    @classmethod
    def from_row(cls, row: np.ndarray) -> "Pose":
        m = np.asarray(row, dtype=np.float64).reshape(3, 4)
        return cls(position=m[:, 3].copy(), rotation=m[:, :3].copy())


@dataclass(frozen=True)
class ScanRecord:
    cloud: PointCloud
    pose: Pose
    segment: int
    timestamp: float | None = None

    @property
    def frame_index(self) -> int:
        return self.cloud.frame_index


@dataclass
class SequenceMeta:
    name: str
    frame_count: int
    segment_of: dict[int, int] = field(default_factory=dict)
    num_segments: int = 0

    def __post_init__(self):
        for frame, seg in self.segment_of.items():
            if not 1 <= seg <= self.num_segments:
                raise ConsistencyError(f"frame {frame}: segment {seg} outside 1..{self.num_segments}")


@dataclass
class Sequence:
    """All frames of one recording, held in memory."""

    records: list[ScanRecord]
    meta: SequenceMeta

    def __len__(self) -> int:
        return len(self.records)

    def positions(self) -> np.ndarray:
        return np.stack([r.pose.position for r in self.records])

    def segments(self) -> np.ndarray:
        return np.array([r.segment for r in self.records], dtype=np.int64)

    def clouds(self) -> list[np.ndarray]:
        return [r.cloud.points for r in self.records]


# ---------------------------------------------------------------------------
# reading


def read_scan(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"missing scan file: {path}")
    raw = path.read_bytes()
    if len(raw) % 16:
        raise ParseError("scan length is not a multiple of 16 bytes", path, len(raw) - len(raw) % 16)
    arr = np.frombuffer(raw, dtype=SCAN_DTYPE).reshape(-1, 4)
    bad = ~np.isfinite(arr[:, :3]).all(axis=1)
    if bad.any():
        raise ParseError("non-finite coordinate", path, int(np.argmax(bad)) * 16)
    return arr[:, :3].astype(np.float64)


def _read_text_rows(path: Path, width: int) -> np.ndarray:
    if not path.is_file():
        raise LoadError(f"missing file: {path}")
    rows = []
    offset = 0
    for line in path.read_bytes().splitlines(keepends=True):
        text = line.decode("ascii", errors="replace").strip()
        if text:
            try:
                vals = [float(tok) for tok in text.split()]
            except ValueError:
                raise ParseError(f"non-numeric value in {text!r}", path, offset) from None
            if len(vals) != width:
                raise ParseError(f"expected {width} values, found {len(vals)}", path, offset)
            rows.append(vals)
        offset += len(line)
    return np.array(rows, dtype=np.float64).reshape(-1, width)


def read_poses(path: Path) -> list[Pose]:
    return [Pose.from_row(r) for r in _read_text_rows(Path(path), 12)]


def read_segments(path: Path) -> dict[int, int]:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"missing file: {path}")
    raw = path.read_bytes()
    text = raw.decode("ascii")
    lines = text.splitlines(keepends=True)
    if not lines or lines[0].strip().replace(" ", "") != "frame,segment":
        raise ParseError("header must be 'frame,segment'", path, 0)
    out: dict[int, int] = {}
    offset = len(lines[0].encode())
    for line in lines[1:]:
        if line.strip():
            parts = line.strip().split(",")
            try:
                frame, seg = (int(p) for p in parts)
            except ValueError:
                raise ParseError(f"bad segment row {line.strip()!r}", path, offset) from None
            if frame in out:
                raise ConsistencyError(f"{path}: frame {frame} labelled twice")
            out[frame] = seg
        offset += len(line.encode())
    return out


def load_sequence(directory: str | Path) -> Sequence:
    """Read and cross-check one sequence directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise LoadError(f"missing sequence directory: {directory}")
    scan_dir = directory / "scans"
    if not scan_dir.is_dir():
        raise LoadError(f"missing scan directory: {scan_dir}")
    scan_files = sorted(scan_dir.glob("*.bin"))
    poses = read_poses(directory / "poses.txt")
    segment_of = read_segments(directory / "segments.csv")
    times_path = directory / "times.txt"
    times = _read_text_rows(times_path, 1)[:, 0] if times_path.exists() else None

    n = len(scan_files)
    if n != len(poses) or n != len(segment_of) or (times is not None and len(times) != n):
        counts = f"scans={n}, poses={len(poses)}, segments={len(segment_of)}"
        if times is not None:
            counts += f", times={len(times)}"
        raise ConsistencyError(f"{directory}: record counts differ ({counts})")
    expected = [f"{i:06d}.bin" for i in range(n)]
    names = [p.name for p in scan_files]
    if names != expected:
        missing = sorted(set(expected) - set(names))
        raise LoadError(f"missing scan file: {scan_dir / (missing[0] if missing else names[0])}")
    if sorted(segment_of) != list(range(n)):
        raise ConsistencyError(f"{directory}: segments.csv frames are not 0..{n - 1}")

    records = [
        ScanRecord(
            cloud=PointCloud(read_scan(path), frame_index=i),
            pose=poses[i],
            segment=segment_of[i],
            timestamp=None if times is None else float(times[i]),
        )
        for i, path in enumerate(scan_files)
    ]
    meta = SequenceMeta(
        name=directory.name,
        frame_count=n,
        segment_of=segment_of,
        num_segments=max(segment_of.values(), default=0),
    )
    return Sequence(records, meta)


# ---------------------------------------------------------------------------
# writing


def write_scan(path: Path, points: np.ndarray, intensity: np.ndarray | None = None) -> None:
    pts = np.asarray(points, dtype=SCAN_DTYPE)
    block = np.zeros((pts.shape[0], 4), dtype=SCAN_DTYPE)
    block[:, :3] = pts
    if intensity is not None:
        block[:, 3] = intensity
    Path(path).write_bytes(block.tobytes())


def _fmt(x: float) -> str:
    return repr(float(x))


def save_sequence(seq: Sequence, directory: str | Path) -> Path:
    """Write ``seq`` in the on-disk layout. Scans are stored as float32."""
    directory = Path(directory)
    (directory / "scans").mkdir(parents=True, exist_ok=True)
    for rec in seq.records:
        write_scan(directory / "scans" / f"{rec.frame_index:06d}.bin", rec.cloud.points)
    with open(directory / "poses.txt", "w") as f:
        for rec in seq.records:
            f.write(" ".join(_fmt(v) for v in rec.pose.matrix().reshape(-1)) + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", "segment"])
    for rec in seq.records:
        w.writerow([rec.frame_index, rec.segment])
    (directory / "segments.csv").write_text(buf.getvalue())
    if all(rec.timestamp is not None for rec in seq.records):
        (directory / "times.txt").write_text("".join(_fmt(r.timestamp) + "\n" for r in seq.records))
    return directory


# ---------------------------------------------------------------------------
# model-side preprocessing


def downsample(cloud: PointCloud | np.ndarray, target_n: int, seed: int | np.random.Generator) -> np.ndarray:
    """Exactly ``target_n`` points: sample without replacement, or keep all and pad by resampling."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    if target_n < 1:
        raise InputError(f"target_n must be >= 1, got {target_n}")
    n = pts.shape[0]
    if n == 0:
        raise EmptyInputError("cannot downsample an empty cloud")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if n >= target_n:
        idx = rng.choice(n, size=target_n, replace=False)
    else:
        idx = np.concatenate([np.arange(n), rng.integers(0, n, size=target_n - n)])
    return pts[idx]


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate_z(cloud: PointCloud | np.ndarray, angle: float) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    if not np.isfinite(angle):
        raise InputError(f"rotation angle must be finite, got {angle}")
    return pts @ rotation_z(angle).T
