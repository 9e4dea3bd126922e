"""Experiment configuration: YAML in, fully resolved YAML out (no hidden defaults)."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .agents import Scheme
from .controllers import MpcWeights
from .dynamics import DynamicsParams
from .environment import WorldConfig, layout
from .prey import PreyHeuristicConfig
from .roi import RoiConfig
from .trainer import TrainConfig

OUTPUT_ROOT_ENV = "ROIMPC_OUTPUT_ROOT"


class ConfigError(ValueError):
    """The configuration file is missing, malformed or inconsistent."""


def _build(cls, data, where: str):
    """Instantiate a flat or nested dataclass from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    extra = sorted(set(data) - set(known))
    if extra:
        raise ConfigError(f"{where}: unknown keys {extra}; allowed: {sorted(known)}")
    kw = {}
    for k, v in data.items():
        if k in ("predator", "prey") and cls is WorldConfig:
            v = _build(DynamicsParams, v, f"{where}.{k}")
        elif k == "prey_heuristic" and cls is WorldConfig:
            v = _build(PreyHeuristicConfig, v, f"{where}.{k}")
        elif isinstance(v, list):
            v = tuple(v)
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def _section(d: dict, key: str) -> dict:
    v = d.get(key)
    if v is None:
        return {}
    if not isinstance(v, dict):
        raise ConfigError(f"{key}: expected a mapping, got {type(v).__name__}")
    return dict(v)


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    return obj


def world_to_dict(cfg: WorldConfig) -> dict:
    return _plain(cfg)


def world_from_dict(d: dict) -> WorldConfig:
    return _build(WorldConfig, d, "world")


@dataclass(frozen=True)
class ExperimentConfig:
    scheme: Scheme = Scheme.ROI_GUIDED
    layout: int = 1
    world_overrides: dict = field(default_factory=dict)
    train: TrainConfig = TrainConfig()
    mpc: MpcWeights = MpcWeights()
    roi: RoiConfig = RoiConfig()
    prey: PreyHeuristicConfig = PreyHeuristicConfig()
    output_dir: str = ""
    seed: int = 0

    @property
    def world(self) -> WorldConfig:
        base = layout(self.layout)
        d = world_to_dict(base)
        d.update(self.world_overrides)
        d["prey_heuristic"] = _plain(self.prey)
        return world_from_dict(d)

    def resolved_output_dir(self) -> Path:
        name = self.output_dir or f"runs/{self.scheme.value}-L{self.layout}-s{self.seed}"
        p = Path(name)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not p.is_absolute():
            p = Path(root) / p
        return p

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.value,
            "layout": self.layout,
            "world": {k: v for k, v in world_to_dict(self.world).items() if k != "prey_heuristic"},
            "train": self.train.to_dict(),
            "mpc": _plain(self.mpc),
            "roi": _plain(self.roi),
            "prey": _plain(self.prey),
            "output_dir": str(self.resolved_output_dir()),
            "seed": self.seed,
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a mapping")
        allowed = {"scheme", "layout", "world", "train", "mpc", "roi", "prey", "output_dir", "seed"}
        extra = sorted(set(d) - allowed)
        if extra:
            raise ConfigError(f"unknown top-level keys {extra}; allowed: {sorted(allowed)}")
        try:
            scheme = Scheme(d.get("scheme", Scheme.ROI_GUIDED.value))
        except ValueError as e:
            raise ConfigError(f"scheme must be one of {[s.value for s in Scheme]}") from e
        lay = d.get("layout", 1)
        if lay not in (1, 2, 3):
            raise ConfigError(f"layout must be 1, 2 or 3, got {lay!r}")
        try:
            seed = int(d.get("seed", 0))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"seed must be an integer, got {d.get('seed')!r}") from e
        world = _section(d, "world")
        if "prey_heuristic" in world:
            raise ConfigError("set the prey heuristic under 'prey', not 'world'")
        train = _section(d, "train")
        if "seed" in train and train["seed"] != seed:
            raise ConfigError("train.seed differs from the top-level seed; set only 'seed'")
        train["seed"] = seed
        cfg = cls(
            scheme=scheme, layout=lay, world_overrides=world,
            train=_build(TrainConfig, train, "train"),
            mpc=_build(MpcWeights, d.get("mpc"), "mpc"),
            roi=_build(RoiConfig, d.get("roi"), "roi"),
            prey=_build(PreyHeuristicConfig, d.get("prey"), "prey"),
            output_dir=str(d.get("output_dir", "") or ""), seed=seed,
        )
        cfg.world  # validate overrides eagerly
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror or e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse config {path}: {e}") from e
        return cls.from_dict(data or {})

    def with_output(self, output_dir: str) -> "ExperimentConfig":
        return replace(self, output_dir=output_dir)
