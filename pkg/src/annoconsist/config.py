"""Run configuration: one JSON file mirroring the library's config types.

Sections map one-to-one onto the dataclasses they configure. Unknown keys
anywhere are rejected so a typo cannot silently fall back to a default.
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .condnet import InferenceConfig
from .loss import LossConfig
from .synthgen import ProposalConfig, SceneConfig
from .train import TrainConfig


class ConfigError(Exception):
    pass


@dataclass
class EvalConfig:
    thresholds: tuple = (0.25, 0.50, 0.70, 0.75)

    def __post_init__(self):
        if not self.thresholds:
            raise ValueError("thresholds must be non-empty")
        for t in self.thresholds:
            if not 0.0 < t <= 1.0:
                raise ValueError("thresholds must lie in (0, 1]")


@dataclass
class RunConfig:
    seed: int = 0
    n_scenes: int = 50
    n_eval_scenes: int = 12
    scene: SceneConfig = field(default_factory=SceneConfig)
    proposal: ProposalConfig = field(default_factory=ProposalConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ValueError("n_scenes must be at least 1")
        if self.n_eval_scenes < 0:
            raise ValueError("n_eval_scenes must be non-negative")


_SECTIONS = {
    "scene": SceneConfig,
    "proposal": ProposalConfig,
    "inference": InferenceConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}
_SCALARS = ("seed", "n_scenes", "n_eval_scenes")


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _build_section(cls, obj: dict, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {k: _tuplify(v) for k, v in obj.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_obj(obj: dict) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("top level: expected an object")
    allowed = set(_SCALARS) | set(_SECTIONS)
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"top level: unknown keys {unknown}")
    kwargs = {}
    for key in _SCALARS:
        if key in obj:
            if not isinstance(obj[key], int) or isinstance(obj[key], bool):
                raise ConfigError(f"{key}: expected an integer")
            kwargs[key] = obj[key]
    for key, cls in _SECTIONS.items():
        if key in obj:
            kwargs[key] = _build_section(cls, obj[key], key)
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_obj(obj)


def _plainify(value):
    if isinstance(value, tuple):
        return [_plainify(v) for v in value]
    return value


def config_to_obj(cfg: RunConfig) -> dict:
    obj: dict = {key: getattr(cfg, key) for key in _SCALARS}
    for key, _cls in _SECTIONS.items():
        section = dataclasses.asdict(getattr(cfg, key))
        obj[key] = {k: _plainify(v) for k, v in section.items()}
    return obj


def save_config(path: str, cfg: RunConfig) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_obj(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
