"""Single pipeline configuration document with strict key checking."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

from .classes import CLASS_NAMES
from .errors import ConfigError
from .evaluation import EvalConfig
from .interp import InterpConfig
from .losses import LossWeights
from .nms import NmsConfig
from .pointcloud import AugmentConfig
from .sampling import DEFAULT_CAP, DEFAULT_RETRY_LIMIT, GroupMap
from .voxel import VoxelConfig

# Per-class paste targets for ground-truth augmentation.
DEFAULT_QUOTA = {
    "car": 2,
    "truck": 3,
    "construction_vehicle": 7,
    "bus": 4,
    "trailer": 6,
    "barrier": 2,
    "motorcycle": 6,
    "bicycle": 6,
    "pedestrian": 2,
    "traffic_cone": 2,
}


@dataclass
class SamplingConfig:
    cap: int = DEFAULT_CAP
    retry_limit: int = DEFAULT_RETRY_LIMIT
    quota: Dict[str, int] = field(default_factory=lambda: dict(DEFAULT_QUOTA))
    n_sweeps: int = 10

    def __post_init__(self):
        unknown = sorted(set(self.quota) - set(CLASS_NAMES))
        if unknown:
            raise ValueError(f"quota names unknown classes {unknown}")
        if any(int(v) < 0 for v in self.quota.values()):
            raise ValueError("quota values must be >= 0")
        self.quota = {k: int(v) for k, v in self.quota.items()}
        if self.cap < 1 or self.retry_limit < 0 or self.n_sweeps < 1:
            raise ValueError("cap and n_sweeps must be >= 1, retry_limit >= 0")


_SECTIONS = {
    "voxel": VoxelConfig,
    "augment": AugmentConfig,
    "nms": NmsConfig,
    "loss": LossWeights,
    "interp": InterpConfig,
    "eval": EvalConfig,
    "sampling": SamplingConfig,
}


@dataclass
class PipelineConfig:
    voxel: VoxelConfig = field(default_factory=VoxelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    nms: NmsConfig = field(default_factory=NmsConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    interp: InterpConfig = field(default_factory=InterpConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    groups: GroupMap = field(default_factory=GroupMap)
    seed: int = 0

    def to_dict(self) -> dict:
        out = {}
        for name in _SECTIONS:
            sec = dataclasses.asdict(getattr(self, name))
            out[name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sec.items()}
        out["groups"] = [list(g) for g in self.groups.groups]
        out["seed"] = self.seed
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        allowed = set(_SECTIONS) | {"groups", "seed"}
        unknown = sorted(set(doc) - allowed)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        kwargs = {}
        for name, klass in _SECTIONS.items():
            if name not in doc:
                continue
            sec = doc[name]
            if not isinstance(sec, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            names = {f.name for f in dataclasses.fields(klass)}
            bad = sorted(set(sec) - names)
            if bad:
                raise ConfigError(f"unknown keys in section {name!r}: {bad}")
            try:
                kwargs[name] = klass(**sec)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"invalid section {name!r}: {e}") from None
        if "groups" in doc:
            try:
                kwargs["groups"] = GroupMap(doc["groups"])
            except (TypeError, ValueError) as e:
                raise ConfigError(f"invalid groups: {e}") from None
        if "seed" in doc:
            seed = doc["seed"]
            if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
                raise ConfigError("seed must be an unsigned 64-bit integer")
            kwargs["seed"] = seed
        return cls(**kwargs)


def load_config(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return PipelineConfig.from_dict(doc)
