"""Run configuration: one JSON document for every stage of the pipeline."""

from __future__ import annotations

import json
import typing
from dataclasses import MISSING, dataclass, field, fields, is_dataclass
from pathlib import Path

from .env import EnvConfig, RewardWeights
from .eval import PerturbationConfig
from .gaitlib import GaitConfig
from .learner import PpoConfig
from .model import RobotModel, default_model
from .physics import PhysicsConfig
from .randomization import Curriculum, RandomizationRanges


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LibraryConfig:
    vx_axis: tuple = tuple(round(-1.0 + 0.2 * k, 10) for k in range(11))
    hz_axis: tuple = tuple(round(0.70 + 0.025 * k, 10) for k in range(11))
    gait: GaitConfig = field(default_factory=GaitConfig)

    def __post_init__(self):
        object.__setattr__(self, "vx_axis", tuple(float(v) for v in self.vx_axis))
        object.__setattr__(self, "hz_axis", tuple(float(v) for v in self.hz_axis))


@dataclass(frozen=True)
class EvalConfig:
    vx_range: tuple = (-2.0, 2.0)
    hz_range: tuple = (0.70, 0.95)
    vx_step: float = 0.1
    hz_step: float = 0.05
    seconds: float = 15.0
    window: float = 5.0
    betas: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "runs"
    model: RobotModel = field(default_factory=default_model)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    library: LibraryConfig = field(default_factory=LibraryConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    randomization: RandomizationRanges = field(default_factory=RandomizationRanges)
    curriculum: Curriculum = field(default_factory=Curriculum)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        tp = hints[name]
        if is_dataclass(tp):
            base = _default(known[name])
            merged = {**_to_plain(base), **value} if isinstance(value, dict) else value
            kwargs[name] = _build(tp, merged, f"{where}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _default(f):
    if f.default_factory is not MISSING:
        return f.default_factory()
    return f.default


def _to_plain(obj):
    if is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def config_from_dict(data: dict) -> RunConfig:
    """Missing keys take defaults; unknown keys anywhere are an error."""
    return _build(RunConfig, data, "config")


def config_to_dict(cfg: RunConfig) -> dict:
    return _to_plain(cfg)


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}")
    return config_from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")
