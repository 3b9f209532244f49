"""
Experiment configuration files (YAML).

A config names a preset and may override parts of its reward or
termination sections; every other section maps onto a dataclass::

    preset: baseline
    termination: {v_max: 0.6}
    ppo: {total_timesteps: 1000000}
    seeds: [0, 1, 2]
    out: runs/baseline

Serialization always writes the fully resolved reward and termination, so
``parse(serialize(cfg)) == cfg``.
"""

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .dynamics import QuadrotorParams
from .env import InitSpec, ObservationSpec, RewardSpec, TerminationSpec
from .errors import ConfigError, InvalidInputError
from .ppo import PpoConfig
from .presets import (
    PRESET_DIR,
    Preset,
    _check_keys,
    load_preset,
    reward_from_dict,
    reward_to_dict,
    termination_from_dict,
    termination_to_dict,
)

SECTIONS = ("preset", "reward", "termination", "quadrotor", "observation", "init", "ppo", "seeds", "out")


@dataclass(frozen=True)
class ExperimentConfig:
    reward: RewardSpec
    termination: TerminationSpec
    preset: Optional[str] = None
    quadrotor: QuadrotorParams = field(default_factory=QuadrotorParams)
    observation: ObservationSpec = field(default_factory=ObservationSpec)
    init: InitSpec = field(default_factory=InitSpec)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    seeds: tuple = (0,)
    out: str = "runs"

    def as_preset(self):
        return Preset(name=self.preset or "custom", reward=self.reward, termination=self.termination)

    @classmethod
    def from_preset(cls, name, **kwargs):
        p = load_preset(name)
        return cls(reward=p.reward, termination=p.termination, preset=p.name, **kwargs)


def _coerce(value, ftype, path):
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return int(value)
    if ftype in (float, Optional[float]):
        if value is None and ftype is not float:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if ftype is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}", path)
        return tuple(_coerce(v, float, f"{path}[{i}]") for i, v in enumerate(value))
    return value


def _dataclass_from_dict(cls, data, path):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _check_keys(data, fields, path)
    kwargs = {k: _coerce(v, fields[k].type, f"{path}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except InvalidInputError as exc:
        raise ConfigError(str(exc), path) from None


def _dataclass_to_dict(obj):
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def config_from_dict(data):
    if data is None:
        data = {}
    _check_keys(data, SECTIONS, "config")
    preset = data.get("preset")
    if preset is not None:
        base = load_preset(preset)
        reward_d = _merge(reward_to_dict(base.reward), data.get("reward") or {})
        term_d = _merge(termination_to_dict(base.termination), data.get("termination") or {})
        if "roll_max_deg" in (data.get("termination") or {}) and "theta_g_max_deg" not in data["termination"]:
            term_d["theta_g_max_deg"] = None
    else:
        if "reward" not in data or "termination" not in data:
            raise ConfigError("either 'preset' or both 'reward' and 'termination' are required", "config")
        reward_d, term_d = data["reward"], data["termination"]
    seeds = data.get("seeds", [0])
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = [seeds]
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("expected a non-empty list of integers", "seeds")
    return ExperimentConfig(
        preset=preset,
        reward=reward_from_dict(reward_d),
        termination=termination_from_dict(term_d),
        quadrotor=_dataclass_from_dict(QuadrotorParams, data.get("quadrotor") or {}, "quadrotor"),
        observation=_dataclass_from_dict(ObservationSpec, data.get("observation") or {}, "observation"),
        init=_dataclass_from_dict(InitSpec, data.get("init") or {}, "init"),
        ppo=_dataclass_from_dict(PpoConfig, data.get("ppo") or {}, "ppo"),
        seeds=tuple(_coerce(s, int, f"seeds[{i}]") for i, s in enumerate(seeds)),
        out=str(data.get("out", "runs")),
    )


def config_to_dict(cfg):
    return {
        "preset": cfg.preset,
        "reward": reward_to_dict(cfg.reward),
        "termination": termination_to_dict(cfg.termination),
        "quadrotor": cfg.quadrotor.to_dict(),
        "observation": _dataclass_to_dict(cfg.observation),
        "init": _dataclass_to_dict(cfg.init),
        "ppo": _dataclass_to_dict(cfg.ppo),
        "seeds": list(cfg.seeds),
        "out": cfg.out,
    }


def parse_config(text):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    return config_from_dict(data)


def serialize_config(cfg):
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text())


def default_quadrotor_params():
    """Parameters from the shipped ``crazyflie.yaml``."""
    data = yaml.safe_load((PRESET_DIR / "crazyflie.yaml").read_text())
    return _dataclass_from_dict(QuadrotorParams, data, "quadrotor")
