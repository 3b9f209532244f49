"""Named reward/termination presets shipped as YAML files next to this module."""

from dataclasses import dataclass
from pathlib import Path

import yaml

from .env import ExpReward, RewardSpec, TerminationSpec
from .errors import ConfigError, InvalidInputError

PRESET_DIR = Path(__file__).with_name("data")
PRESET_NAMES = ("acrobatic", "baseline", "inspection")

_REWARD_TERMS = ("xy", "z", "velocity", "angle")
_EXP_FIELDS = ("alpha", "delta_alpha", "beta", "delta_beta")


@dataclass(frozen=True)
class Preset:
    name: str
    reward: RewardSpec
    termination: TerminationSpec


def _check_keys(data, allowed, path):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping, got {type(data).__name__}", path)
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown field(s) {unknown}; allowed: {sorted(allowed)}", path)


def _number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", path)
    return float(value)


def reward_from_dict(data, path="reward"):
    _check_keys(data, ("survival", "smoothness") + _REWARD_TERMS, path)
    try:
        terms, weights = {}, {}
        for term in _REWARD_TERMS:
            sub = data.get(term)
            if sub is None:
                raise ConfigError("missing reward term", f"{path}.{term}")
            _check_keys(sub, ("weight",) + _EXP_FIELDS, f"{path}.{term}")
            weights[term] = _number(sub.get("weight"), f"{path}.{term}.weight")
            kwargs = {k: _number(sub[k], f"{path}.{term}.{k}") for k in _EXP_FIELDS if k in sub}
            if "delta_alpha" not in kwargs:
                raise ConfigError("missing field", f"{path}.{term}.delta_alpha")
            try:
                terms[term] = ExpReward(**kwargs)
            except InvalidInputError as exc:
                raise ConfigError(str(exc), f"{path}.{term}") from None
        smooth = data.get("smoothness", {})
        _check_keys(smooth, ("weight",), f"{path}.smoothness")
        return RewardSpec(
            survival=_number(data.get("survival"), f"{path}.survival"),
            w_xy=weights["xy"],
            w_z=weights["z"],
            w_velocity=weights["velocity"],
            w_angle=weights["angle"],
            w_smoothness=_number(smooth.get("weight"), f"{path}.smoothness.weight"),
            **terms,
        )
    except InvalidInputError as exc:
        raise ConfigError(str(exc), path) from None


def reward_to_dict(spec):
    out = {"survival": spec.survival}
    weights = {"xy": spec.w_xy, "z": spec.w_z, "velocity": spec.w_velocity, "angle": spec.w_angle}
    for term in _REWARD_TERMS:
        exp = getattr(spec, term)
        out[term] = {"weight": weights[term], **{k: getattr(exp, k) for k in _EXP_FIELDS}}
    out["smoothness"] = {"weight": spec.w_smoothness}
    return out


_TERMINATION_FIELDS = (
    "z_min", "p_e_max", "theta_g_max_deg", "roll_max_deg", "pitch_max_deg", "v_max", "omega_max_deg", "horizon"
)


def termination_from_dict(data, path="termination"):
    _check_keys(data, _TERMINATION_FIELDS, path)
    kwargs = {k: (None if v is None else _number(v, f"{path}.{k}")) for k, v in data.items()}
    # an explicit roll/pitch pair switches off the geodesic bound unless it is also given
    if "roll_max_deg" in kwargs and "theta_g_max_deg" not in kwargs:
        kwargs["theta_g_max_deg"] = None
    try:
        return TerminationSpec(**kwargs)
    except InvalidInputError as exc:
        raise ConfigError(str(exc), path) from None


def termination_to_dict(spec):
    return {k: getattr(spec, k) for k in _TERMINATION_FIELDS}


def load_preset_file(path):
    path = Path(path)
    with path.open() as fh:
        data = yaml.safe_load(fh)
    _check_keys(data, ("name", "reward", "termination"), str(path))
    return Preset(
        name=str(data.get("name", path.stem)),
        reward=reward_from_dict(data["reward"]),
        termination=termination_from_dict(data["termination"]),
    )


def load_preset(name):
    """Load one of :data:`PRESET_NAMES`."""
    if isinstance(name, Preset):
        return name
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(PRESET_NAMES)}", "preset")
    return load_preset_file(PRESET_DIR / f"{name}.yaml")
