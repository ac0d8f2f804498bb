"""Deterministic synthetic orchard sequences.

Trees stand in ``rows`` parallel lines along +y, ``row_spacing`` apart in x.
The robot drives one lane per tree row, half a spacing to the +x side of it,
and turns through the field extremities (below y=0 and above y=row_length)
between lanes. Every lap repeats the same serpentine path. Scans are the map
points within ``sensor_range`` of the pose, in the sensor frame, with
isotropic Gaussian noise.

Segment ids: lanes are ``1..rows``; the near extremity (y < 0) is ``rows+1``
and the far extremity (y > row_length) is ``rows+2``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .dataio import PointCloud, Pose, ScanRecord, Sequence, SequenceMeta, rotation_z, save_sequence
from .errors import ConfigError

# turn-around distance past the row ends
HEADLAND = 2.0


@dataclass(frozen=True)
class OrchardSpec:
    rows: int = 3
    row_length: float = 20.0
    row_spacing: float = 3.0
    trees_per_row: int = 10
    points_per_tree: int = 150
    noise_sigma: float = 0.02
    laps: int = 2
    scan_spacing: float = 0.5
    sensor_range: float = 8.0
    seed: int = 0
    # None: the map is drawn from ``seed``; set it to revisit the same orchard with a new traversal
    map_seed: int | None = None
    lateral_jitter: float = 0.15

    def validate(self) -> "OrchardSpec":
        problems = []
        for name in ("rows", "trees_per_row", "points_per_tree"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.laps < 2:
            problems.append("laps must be >= 2 so that every place is revisited")
        for name in ("row_length", "row_spacing", "scan_spacing", "sensor_range"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        if self.noise_sigma < 0 or self.lateral_jitter < 0:
            problems.append("noise terms must be >= 0")
        if problems:
            raise ConfigError("invalid orchard spec: " + "; ".join(problems))
        return self

    @property
    def num_segments(self) -> int:
        return self.rows + 2

    @classmethod
    def from_dict(cls, d: dict) -> "OrchardSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown orchard spec keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PlantMap:
    points: np.ndarray  # (rows * trees * ppt, 3)
    tree_of_point: np.ndarray  # (N,) tree id
    row_of_tree: np.ndarray  # (T,)
    trunks: np.ndarray  # (T, 2) trunk x, y
    row_lines: list[np.ndarray]  # per row, the (2, 2) start/end polyline


def _map_rng(spec: OrchardSpec) -> np.random.Generator:
    return np.random.default_rng([spec.seed if spec.map_seed is None else spec.map_seed, 1])


def plant_map(spec: OrchardSpec) -> PlantMap:
    """Tree clusters of a cone-shaped canopy, one per grid slot."""
    spec.validate()
    rng = _map_rng(spec)
    gap = spec.row_length / spec.trees_per_row
    clouds, tree_ids, trunks, row_of_tree = [], [], [], []
    for r in range(spec.rows):
        x = r * spec.row_spacing
        for t in range(spec.trees_per_row):
            y = (t + 0.5) * gap + rng.uniform(-0.2, 0.2) * gap
            height = rng.uniform(2.0, 3.0)
            radius = rng.uniform(0.4, 0.9)
            z = rng.uniform(0.0, height, spec.points_per_tree)
            # canopy narrows linearly to the top
            rad = radius * (1.0 - z / height) * np.sqrt(rng.uniform(0.0, 1.0, spec.points_per_tree))
            ang = rng.uniform(0.0, 2 * np.pi, spec.points_per_tree)
            pts = np.column_stack([x + rad * np.cos(ang), y + rad * np.sin(ang), z])
            tid = len(trunks)
            clouds.append(pts)
            tree_ids.append(np.full(spec.points_per_tree, tid))
            trunks.append((x, y))
            row_of_tree.append(r)
    lines = [np.array([[r * spec.row_spacing, 0.0], [r * spec.row_spacing, spec.row_length]]) for r in range(spec.rows)]
    return PlantMap(
        points=np.concatenate(clouds),
        tree_of_point=np.concatenate(tree_ids),
        row_of_tree=np.array(row_of_tree),
        trunks=np.array(trunks, dtype=np.float64),
        row_lines=lines,
    )


def lane_x(spec: OrchardSpec, row: int) -> float:
    return (row + 0.5) * spec.row_spacing


def lap_path(spec: OrchardSpec) -> tuple[np.ndarray, np.ndarray]:
    """Vertices of one serpentine lap and the segment id of each edge."""
    L, H = spec.row_length, HEADLAND
    verts = []
    segs = []
    near, far = spec.rows + 1, spec.rows + 2
    for r in range(spec.rows):
        x = lane_x(spec, r)
        up = r % 2 == 0
        y0, y1 = (0.0, L) if up else (L, 0.0)
        if r == 0:
            verts.append((x, y0))
        else:
            # finish the turn: come from the headland down/up to the row entry
            verts.append((x, y0 - H if up else y0 + H))
            segs.append(near if up else far)
            verts.append((x, y0))
            segs.append(near if up else far)
        verts.append((x, y1))
        segs.append(r + 1)
        if r + 1 < spec.rows:
            y_turn = y1 + H if up else y1 - H
            verts.append((x, y_turn))
            segs.append(far if up else near)
    return np.array(verts, dtype=np.float64), np.array(segs, dtype=np.int64)


def path_length(spec: OrchardSpec) -> float:
    verts, _ = lap_path(spec)
    return float(np.sum(np.linalg.norm(np.diff(verts, axis=0), axis=1)))


def _sample_lap(spec: OrchardSpec):
    verts, segs = lap_path(spec)
    edge_len = np.linalg.norm(np.diff(verts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(edge_len)])
    count = math.ceil(cum[-1] / spec.scan_spacing)
    s = np.arange(count) * spec.scan_spacing
    edge = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(edge_len) - 1)
    frac = (s - cum[edge]) / edge_len[edge]
    xy = verts[edge] + frac[:, None] * (verts[edge + 1] - verts[edge])
    d = verts[edge + 1] - verts[edge]
    heading = np.arctan2(d[:, 1], d[:, 0])
    return xy, heading, segs[edge], s


def generate(spec: OrchardSpec, name: str = "synthetic") -> Sequence:
    spec.validate()
    pmap = plant_map(spec)
    rng = np.random.default_rng([spec.seed, 2])
    xy, heading, seg, s = _sample_lap(spec)
    lap_len = path_length(spec)
    records = []
    frame = 0
    for lap in range(spec.laps):
        offset = rng.uniform(-spec.lateral_jitter, spec.lateral_jitter)
        for k in range(len(xy)):
            normal = np.array([-np.sin(heading[k]), np.cos(heading[k])])
            pos = np.array([*(xy[k] + offset * normal), 0.0])
            R = rotation_z(heading[k])
            local = (pmap.points - pos) @ R
            local = local[np.linalg.norm(local[:, :2], axis=1) <= spec.sensor_range]
            local = local + rng.normal(0.0, spec.noise_sigma, local.shape)
            pts = local.astype(np.float32).astype(np.float64)
            records.append(
                ScanRecord(
                    cloud=PointCloud(pts, frame_index=frame),
                    pose=Pose(position=pos, rotation=R),
                    segment=int(seg[k]),
                    timestamp=float(lap * lap_len + s[k]),
                )
            )
            frame += 1
    meta = SequenceMeta(
        name=name,
        frame_count=len(records),
        segment_of={r.frame_index: r.segment for r in records},
        num_segments=spec.num_segments,
    )
    return Sequence(records, meta)


def generate_to(spec: OrchardSpec, directory: str | Path) -> Sequence:
    seq = generate(spec, name=Path(directory).name)
    save_sequence(seq, directory)
    return seq
