"""Structured config file loading with schema validation.

One YAML file holds every tunable section: plant, servo, estimator
training, RL environment and PPO. Every section is optional; omitted
keys fall back to the dataclass defaults. Validation errors always name
the offending field path so a bad file fails before any computation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from tendonsim.errors import ConfigError
from tendonsim.estimators.training import TrainConfig
from tendonsim.plant import PlantConfig
from tendonsim.rl.env import EnvConfig
from tendonsim.rl.ppo import PpoConfig
from tendonsim.servo import ServoConfig

SECTIONS = ("plant", "servo", "train", "env", "ppo")

# fields that must be strictly positive beyond the dataclass checks
_POSITIVE = {
    "train": ("epochs", "batch_size", "lr"),
    "env": ("n_envs", "episode_seconds", "action_limit",
            "control_rate_hz", "sim_rate_hz", "max_force"),
    "ppo": ("epochs_per_update", "minibatches", "num_envs", "horizon",
            "lr", "total_updates", "eval_every", "eval_envs"),
}
_NON_NEGATIVE = {
    "train": ("lr_min_frac", "seed"),
    "env": ("goal_weight", "smooth_weight"),
    "ppo": ("value_coef", "gae_lambda"),
}


def _coerce(path: str, value, template):
    """Check ``value`` against the type of the default it replaces."""
    if template is None:
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer or null, got {value!r}")
        return value
    if isinstance(template, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(template, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(template, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(template, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(template, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        if len(value) != len(template):
            raise ConfigError(
                f"{path}: expected {len(template)} entries, got {len(value)}")
        return tuple(_coerce(f"{path}[{i}]", v, template[i])
                     for i, v in enumerate(value))
    raise ConfigError(f"{path}: unsupported field type {type(template).__name__}")


def _build_section(name: str, cls, data: dict):
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown key")
        kwargs[key] = _coerce(f"{name}.{key}", value, getattr(defaults, key))
    cfg = cls(**kwargs)
    for fname in _POSITIVE.get(name, ()):
        if not getattr(cfg, fname) > 0:
            raise ConfigError(
                f"{name}.{fname} must be positive, got {getattr(cfg, fname)}")
    for fname in _NON_NEGATIVE.get(name, ()):
        if getattr(cfg, fname) < 0:
            raise ConfigError(
                f"{name}.{fname} must be >= 0, got {getattr(cfg, fname)}")
    if hasattr(cfg, "validate"):
        cfg.validate()
    return cfg


@dataclass
class FullConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    servo: ServoConfig = field(default_factory=ServoConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name))
                for name in SECTIONS}

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_config(data: dict | None) -> FullConfig:
    """Validate a parsed YAML mapping and build the typed sections."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    classes = {"plant": PlantConfig, "servo": ServoConfig, "train": TrainConfig,
               "env": EnvConfig, "ppo": PpoConfig}
    for key in data:
        if key not in classes:
            raise ConfigError(f"unknown config section {key!r}; expected one of {SECTIONS}")
        if not isinstance(data[key], dict):
            raise ConfigError(f"{key}: section must be a mapping, got {data[key]!r}")
    cfg = FullConfig(**{name: _build_section(name, cls, data.get(name, {}))
                        for name, cls in classes.items()})
    if cfg.env.sim_rate_hz % cfg.env.control_rate_hz != 0:
        raise ConfigError(
            f"env.sim_rate_hz must be a multiple of env.control_rate_hz, "
            f"got {cfg.env.sim_rate_hz} and {cfg.env.control_rate_hz}")
    return cfg


def load_config(path=None) -> FullConfig:
    """Read and validate a YAML config file; ``None`` means all defaults."""
    if path is None:
        return FullConfig()
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    return parse_config(data)
