"""Pipeline configuration: nested dataclasses loaded from JSON, with dotted overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Tuple

from .errors import ConfigError


@dataclass
class FilterConfig:
    k: float = 2.0
    epochs: int = 150
    lr: float = 1e-3
    batch: int = 32


@dataclass
class ClusterConfig:
    K: int = 8
    epochs: int = 150
    update_interval: int = 1
    method: str = "dec"  # or "kmeans" (no self-training)
    lr: float = 1e-3
    batch: int = 32


@dataclass
class GridConfig:
    tile_size: int = 112
    rows: int = 2
    cols: int = 4
    border: int = 3
    overlay_joints: bool = False


@dataclass
class ClassifierConfig:
    epochs: int = 150
    lr: float = 1e-3
    batch: int = 32
    hidden: int = 128


@dataclass
class AblationConfig:
    all_actors: bool = False
    random_frames: bool = False
    cartesian: bool = False
    filtering: bool = True


@dataclass
class PipelineConfig:
    manifest: str = "data/manifest.json"
    model_dir: str = "models"
    output_dir: str = "out"
    score_threshold: float = 0.5
    seed: int = 0
    workers: int = 1
    save_bundle: bool = True
    filter: FilterConfig = field(default_factory=FilterConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def validate(self) -> "PipelineConfig":
        checks = [
            (0.0 <= self.score_threshold <= 1.0, "score_threshold must lie in [0, 1]"),
            (self.workers >= 1, "workers must be >= 1"),
            (self.filter.k >= 0, "filter.k must be >= 0"),
            (self.filter.epochs >= 0 and self.filter.batch >= 1 and self.filter.lr > 0, "bad filter training settings"),
            (self.cluster.K >= 1, "cluster.K must be >= 1"),
            (self.cluster.epochs >= 0 and self.cluster.update_interval >= 1, "bad cluster schedule"),
            (self.cluster.method in ("dec", "kmeans"), "cluster.method must be 'dec' or 'kmeans'"),
            (self.cluster.batch >= 1 and self.cluster.lr > 0, "bad cluster optimiser settings"),
            (self.grid.tile_size >= 1 and self.grid.rows >= 1 and self.grid.cols >= 1, "bad grid layout"),
            (self.grid.border >= 0, "grid.border must be >= 0"),
            (self.classifier.epochs >= 0 and self.classifier.batch >= 1 and self.classifier.lr > 0,
             "bad classifier training settings"),
            (self.classifier.hidden >= 1, "classifier.hidden must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value: Any, typ, name: str):
    typ = {"int": int, "float": float, "bool": bool, "str": str}.get(typ, typ) if isinstance(typ, str) else typ
    if typ is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "1", "yes", "on", "false", "0", "no", "off"):
            return value.lower() in ("true", "1", "yes", "on")
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    if typ is int:
        if isinstance(value, bool):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        try:
            f = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: expected an integer, got {value!r}") from None
        if f != int(f):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return int(f)
    if typ is float:
        if isinstance(value, bool):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: expected a number, got {value!r}") from None
    if not isinstance(value, str):
        raise ConfigError(f"{name}: expected a string, got {value!r}")
    return value


def _build(cls, data: dict, prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(prefix + u for u in sorted(unknown))}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        if dataclasses.is_dataclass(f.default_factory if f.default_factory is not dataclasses.MISSING else None):
            kwargs[name] = _build(f.default_factory, value, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(value, f.type, prefix + name)
    return cls(**kwargs)


def config_from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data).validate()


def load_config(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig().validate()
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def iter_fields(cls=PipelineConfig, prefix: str = "") -> Iterator[Tuple[str, Any, Any]]:
    """Yield ``(dotted_name, type, default)`` for every leaf field."""
    inst = cls()
    for f in dataclasses.fields(cls):
        value = getattr(inst, f.name)
        if dataclasses.is_dataclass(value):
            yield from iter_fields(type(value), f"{prefix}{f.name}.")
        else:
            yield prefix + f.name, f.type, value


def apply_overrides(cfg: PipelineConfig, overrides: Dict[str, Any]) -> PipelineConfig:
    """Return a copy of ``cfg`` with dotted-name overrides applied."""
    data = cfg.to_dict()
    for dotted, value in overrides.items():
        node = data
        *parents, leaf = dotted.split(".")
        for p in parents:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config field: {dotted}")
            node = node[p]
        if leaf not in node:
            raise ConfigError(f"unknown config field: {dotted}")
        node[leaf] = value
    return config_from_dict(data)
