"""Training configuration and its dotted-key text format.

One ``key = value`` per line, ``#`` starts a comment. Keys address the
dataclass tree below (``lr``, ``network.arch``, ``augment.exsa.enabled``,
``loss.hires`` ...). Values are JSON literals; bare words are strings.
The optional ``schema`` key must equal ``SCHEMA_VERSION``.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..augment import AugmentConfig
from ..model import NetworkSpec

SCHEMA_VERSION = 1


@dataclass
class LossConfig:
    hires: bool = True
    w_hires: float = 1.0
    radius_mm: float = 2.0
    reduction: str = "mean"


@dataclass
class TrainConfig:
    lr: float = 1e-3
    lr_min: float = 0.0
    beta1: float = 0.95
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    batch: int = 4
    epochs: int = 20
    restart_t0: float = 10
    restart_mult: float = 2
    seed: int = 0
    slice_stride: int = 1
    val_every: int = 1
    planes: tuple = ("axial", "coronal", "sagittal")
    merge_cortex: bool = False
    network: NetworkSpec = field(default_factory=NetworkSpec)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        for name in ("lr", "batch", "epochs", "restart_t0", "restart_mult", "slice_stride", "val_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        self.planes = tuple(self.planes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set(obj, parts, value, full_key):
    names = {f.name: f for f in dataclasses.fields(obj)}
    head = parts[0]
    if head not in names:
        raise KeyError(f"unknown config key {full_key!r}")
    if len(parts) == 1:
        cur = getattr(obj, head)
        if isinstance(cur, tuple) and isinstance(value, (list, str)):
            value = tuple(value) if isinstance(value, list) else tuple(v.strip() for v in value.split(","))
        elif isinstance(cur, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        elif dataclasses.is_dataclass(cur):
            raise KeyError(f"config key {full_key!r} names a section, not a value")
        new = value
    else:
        child = getattr(obj, head)
        if not dataclasses.is_dataclass(child):
            raise KeyError(f"config key {full_key!r}: {head} has no sub-keys")
        new = _set(child, parts[1:], value, full_key)
    return dataclasses.replace(obj, **{head: new})


def apply_overrides(cfg: TrainConfig, items: dict) -> TrainConfig:
    for key, value in items.items():
        cfg = _set(cfg, key.split("."), value, key)
    return cfg


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    items = {}
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {i}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        items[key] = _parse_value(value)
    version = items.pop("schema", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(f"config schema {version} not supported (expected {SCHEMA_VERSION})")
    return apply_overrides(base or TrainConfig(), items)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _flatten(obj, prefix=""):
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(v):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


def dump_config(cfg: TrainConfig) -> str:
    lines = [f"schema = {SCHEMA_VERSION}"]
    for key, v in _flatten(cfg):
        lines.append(f"{key} = {json.dumps(list(v) if isinstance(v, tuple) else v)}")
    return "\n".join(lines) + "\n"
