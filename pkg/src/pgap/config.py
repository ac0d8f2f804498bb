"""Plain-text ``key = value`` run configuration.

Keys are ``<section>.<field>`` with sections ``model``, ``mining``, ``loss``,
``optim``, ``train`` and ``orchard``. Lines starting with ``#`` are comments.
Values are Python literals (``0.5``, ``true``, ``[64, 128]``) or bare strings.

Example::

    optim.learning_rate = 1e-4
    loss.alpha = 0.5
    model.pointnet_widths = [64, 128]
"""
from __future__ import annotations

import ast
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .mining import MiningConfig
from .model import ModelConfig
from .synthgen import OrchardSpec
from .training import LossConfig, OptimConfig, TrainConfig


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    orchard: OrchardSpec = field(default_factory=OrchardSpec)

    def to_dict(self) -> dict:
        return {f.name: asdict(getattr(self, f.name)) for f in fields(self)}

    def dumps(self) -> str:
        lines = []
        for section, values in self.to_dict().items():
            for key, value in values.items():
                lines.append(f"{section}.{key} = {_format(value)}")
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value) if value is not None else "none"


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _coerce(section: str, key: str, value, current):
    if current is None or value is None:
        return value
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key}: expected true/false, got {value!r}")
        return value
    if isinstance(current, float) and isinstance(value, int):
        return float(value)
    if isinstance(current, list) and isinstance(value, tuple):
        return list(value)
    if type(current) is not type(value):
        raise ConfigError(f"{section}.{key}: expected {type(current).__name__}, got {value!r}")
    return value


def parse_config(text: str, base: RunConfig | None = None, default_section: str | None = None) -> RunConfig:
    """Apply the assignments in ``text`` on top of ``base`` (defaults if None)."""
    cfg = base or RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key and default_section:
            key = f"{default_section}.{key}"
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} needs a section prefix")
        section, name = key.split(".", 1)
        if section not in {f.name for f in fields(RunConfig)}:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        target = getattr(cfg, section)
        names = {f.name for f in fields(target)}
        if name not in names:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parsed = _coerce(section, name, _parse_value(value), getattr(target, name))
        if section == "orchard":
            cfg.orchard = replace(target, **{name: parsed})
        else:
            setattr(target, name, parsed)
    return cfg


def load_config(path: str | Path | None, default_section: str | None = None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"missing config file: {path}")
    return parse_config(path.read_text(), default_section=default_section)
