"""PointNetPGAP descriptor network and the segment classification head."""
from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, InputError, LoadError
from .tensor import Parameter, Tensor

AGGREGATORS = ("both", "gap", "pfi")


@dataclass
class ModelConfig:
    local_dim: int = 16
    descriptor_dim: int = 256
    pointnet_widths: list[int] = field(default_factory=lambda: [64, 128])
    slc_hidden: list[int] = field(default_factory=lambda: [256, 64])
    num_segments: int = 6
    # "both" is the full model; "gap"/"pfi" keep a single aggregator for ablations
    aggregator: str = "both"

    def validate(self) -> "ModelConfig":
        if self.local_dim < 1 or self.descriptor_dim < 1:
            raise ConfigError("local_dim and descriptor_dim must be >= 1")
        if self.num_segments < 2:
            raise ConfigError(f"num_segments must be >= 2, got {self.num_segments}")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}")
        if any(w < 1 for w in self.pointnet_widths + self.slc_hidden):
            raise ConfigError("layer widths must be >= 1")
        return self

    @property
    def layer_widths(self) -> list[int]:
        """Per-point MLP widths including the local feature output."""
        return list(self.pointnet_widths) + [self.local_dim]

    @property
    def aggregate_dim(self) -> int:
        c = self.local_dim
        return {"both": c + c * c, "gap": c, "pfi": c * c}[self.aggregator]


class Params:
    """Named parameters in declaration order."""

    def __init__(self, config: ModelConfig, entries: dict[str, Parameter]):
        self.config = config
        self._p = entries

    def __getitem__(self, name: str) -> Parameter:
        return self._p[name]

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._p.values())

    def __len__(self) -> int:
        return len(self._p)

    def names(self) -> list[str]:
        return list(self._p)

    def count(self, prefix: str = "") -> int:
        return sum(p.data.size for n, p in self._p.items() if n.startswith(prefix))

    def zero_grad(self) -> None:
        for p in self:
            p.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self._p.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        for n, p in self._p.items():
            if arrays[n].shape != p.data.shape:
                raise ConfigError(f"{n}: shape {arrays[n].shape} != {p.data.shape}")
            p.data = np.array(arrays[n], dtype=np.float64)

    def mlp(self, prefix: str) -> list[tuple[Parameter, Parameter]]:
        layers = []
        i = 0
        while f"{prefix}.{i}.weight" in self._p:
            layers.append((self._p[f"{prefix}.{i}.weight"], self._p[f"{prefix}.{i}.bias"]))
            i += 1
        return layers


def _layer_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, int]]]:
    shapes = []
    widths = [3] + config.layer_widths
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        shapes.append((f"pointnet.{i}", (a, b)))
    shapes.append(("fc", (config.aggregate_dim, config.descriptor_dim)))
    widths = [config.descriptor_dim] + list(config.slc_hidden) + [config.num_segments]
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        shapes.append((f"slc.{i}", (a, b)))
    return shapes


def init_params(config: ModelConfig, seed: int) -> Params:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    config.validate()
    rng = np.random.default_rng(seed)
    entries: dict[str, Parameter] = {}
    for name, (a, b) in _layer_shapes(config):
        bound = 1.0 / np.sqrt(a)
        entries[f"{name}.weight"] = Parameter(rng.uniform(-bound, bound, (a, b)), name=f"{name}.weight")
        entries[f"{name}.bias"] = Parameter(np.zeros(b), name=f"{name}.bias")
    return Params(config, entries)


# ---------------------------------------------------------------------------
# forward pieces


def _as_points(P) -> Tensor:
    if isinstance(P, Tensor):
        return P
    pts = getattr(P, "points", P)
    arr = np.asarray(pts)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float64)
    if arr.ndim < 2 or arr.shape[-1] != 3:
        raise InputError(f"expected [..., n, 3] points, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("point cloud contains NaN or Inf")
    return Tensor(arr)


def extract_local(P, params: Params) -> Tensor:
    """Per-point shared MLP: ``[..., n, 3] -> [..., n, c]``."""
    x = _as_points(P)
    layers = params.mlp("pointnet")
    for i, (W, b) in enumerate(layers):
        x = T.linear(x, W, b)
        if i + 1 < len(layers):
            x = T.relu(x)
    return x


def aggregate(F: Tensor, aggregator: str = "both") -> Tensor:
    """Pre-normalisation descriptor ``[flatten(F^T F / n), mean(F)]``."""
    parts = []
    if aggregator in ("both", "pfi"):
        parts.append(T.flatten_last(T.gram(F), 2))
    if aggregator in ("both", "gap"):
        parts.append(T.mean_rows(F))
    return parts[0] if len(parts) == 1 else T.concat(parts, axis=-1)


def describe(P, params: Params) -> Tensor:
    """Unit-norm place descriptor(s) for one scan ``[n, 3]`` or a stack ``[B, n, 3]``."""
    F = extract_local(P, params)
    D = T.linear(aggregate(F, params.config.aggregator), params["fc.weight"], params["fc.bias"])
    return T.l2_normalize(D)


def predict_segment(D: Tensor, params: Params, num_segments: int | None = None) -> Tensor:
    """Segment log-probabilities from descriptor(s) ``[..., d] -> [..., L]``."""
    layers = params.mlp("slc")
    width = layers[-1][0].data.shape[1]
    if num_segments is not None and num_segments != width:
        raise ConfigError(f"segment head has {width} outputs, asked for {num_segments}")
    x = D if isinstance(D, Tensor) else Tensor(D)
    for i, (W, b) in enumerate(layers):
        x = T.linear(x, W, b)
        if i + 1 < len(layers):
            x = T.relu(x)
    return T.log_softmax(x)


def describe_many(clouds, params: Params, batch: int = 32, workers: int = 0) -> np.ndarray:
    """Descriptors for equally sized clouds, without recording gradients.

    ``workers > 1`` spreads batches over a thread pool; results keep input order.
    """
    chunks = [np.stack(clouds[i : i + batch]) for i in range(0, len(clouds), batch)]
    if not chunks:
        return np.zeros((0, params.config.descriptor_dim))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(lambda c: describe(c, params).data, chunks))
    else:
        out = [describe(c, params).data for c in chunks]
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# checkpoints
#
# magic b"PGAPCKPT" | u32 LE header length | UTF-8 JSON header | float64 LE blocks
# The header lists parameter names and shapes in declaration order; the blocks
# follow in that order, row-major.

CKPT_MAGIC = b"PGAPCKPT"


def save_checkpoint(path: str | Path, params: Params, **meta) -> None:
    header = {
        "format": 1,
        "config": asdict(params.config),
        "params": [[n, list(params[n].data.shape)] for n in params.names()],
        **meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for p in params:
            f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[Params, dict]:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"missing checkpoint: {path}")
    raw = path.read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen])
    config = ModelConfig(**header["config"])
    params = init_params(config, 0)
    offset = 12 + hlen
    arrays = {}
    for name, shape in header["params"]:
        size = int(np.prod(shape)) * 8
        arrays[name] = np.frombuffer(raw[offset : offset + size], dtype="<f8").reshape(shape)
        offset += size
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes")
    params.load(arrays)
    return params, header
