"""Run configuration: one JSON document per run, overridable by dotted keys."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .detect import SpotConfig
from .errors import ConfigError
from .inject import InjectionSpec
from .net import NetConfig
from .synth import SynthConfig
from .train import TrainConfig


@dataclass(frozen=True)
class DetectConfig:
    n_pairs: int = 5
    mask_ratio: float = 0.5
    q: float = 1e-3
    init_quantile: float = 0.98
    init_fraction: float = 0.2
    # "auto": use a sibling *_train.csv as calibration split when present, else the stream prefix
    calibration: str = "auto"

    def __post_init__(self):
        if self.n_pairs < 2:
            raise ConfigError("detect.n_pairs must be >= 2")
        if self.calibration not in ("auto", "prefix"):
            raise ConfigError("detect.calibration must be 'auto' or 'prefix'")

    @property
    def spot(self) -> SpotConfig:
        return SpotConfig(q=self.q, init_quantile=self.init_quantile, init_fraction=self.init_fraction)


@dataclass(frozen=True)
class EvalConfig:
    alphas: tuple = (0.03, 0.1)


SECTIONS = {
    "net": NetConfig,
    "train": TrainConfig,
    "inject": InjectionSpec,
    "detect": DetectConfig,
    "eval": EvalConfig,
    "synth": SynthConfig,
}
TOP_LEVEL = {"run_dir", "seed", "dataset"} | set(SECTIONS)


@dataclass
class RunConfig:
    run_dir: str = "runs/default"
    seed: int = 0
    dataset: Optional[str] = None  # manifest path
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    inject: InjectionSpec = field(default_factory=InjectionSpec)
    detect: DetectConfig = field(default_factory=DetectConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_dict(self) -> dict:
        d = {"run_dir": self.run_dir, "seed": self.seed, "dataset": self.dataset}
        for name in SECTIONS:
            obj = getattr(self, name)
            d[name] = obj.to_dict() if hasattr(obj, "to_dict") else _plain(asdict(obj))
        return d

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("run_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def manifest_path(self) -> Path:
        if not self.dataset:
            raise ConfigError("config has no 'dataset' manifest path")
        p = Path(self.dataset)
        if not p.is_file():
            raise ConfigError(f"dataset manifest {p} does not exist")
        return p


def _plain(obj):
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def _build_section(name: str, raw: dict):
    cls = SECTIONS[name]
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"section '{name}': unknown keys {sorted(unknown)}")
    try:
        if hasattr(cls, "from_dict"):
            return cls.from_dict(raw)
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section '{name}': {exc}") from None


def from_dict(raw: dict) -> RunConfig:
    unknown = set(raw) - TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kwargs = {k: raw[k] for k in ("run_dir", "seed", "dataset") if k in raw}
    for name in SECTIONS:
        if name in raw:
            kwargs[name] = _build_section(name, raw[name])
    return RunConfig(**kwargs)


def parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key.sub=value")
    key, value = item.split("=", 1)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return key.strip().split("."), parsed


def apply_overrides(raw: dict, overrides) -> dict:
    raw = json.loads(json.dumps(raw))
    for item in overrides or ():
        path, value = parse_override(item)
        node = raw
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {part} is not a section")
        node[path[-1]] = value
    return raw


def load(path=None, overrides=()) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    return from_dict(apply_overrides(raw, overrides))
