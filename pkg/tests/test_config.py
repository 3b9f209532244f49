import math

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from quadtune.config import (
    ExperimentConfig,
    config_from_dict,
    default_quadrotor_params,
    load_config,
    parse_config,
    serialize_config,
)
from quadtune.dynamics import QuadrotorParams
from quadtune.errors import ConfigError
from quadtune.presets import PRESET_NAMES, load_preset, reward_from_dict, reward_to_dict, termination_from_dict


def test_presets_carry_published_values():
    base, acro, insp = (load_preset(n) for n in ("baseline", "acrobatic", "inspection"))
    assert (base.reward.xy.delta_alpha, acro.reward.xy.delta_alpha, insp.reward.xy.delta_alpha) == (0.5, 4.0, 4.0)
    assert insp.reward.xy.delta_beta == 150.0 and base.reward.xy.delta_beta == 20.0
    assert (acro.reward.w_velocity, acro.reward.velocity.delta_alpha) == (0.08, 0.5)
    assert (insp.reward.w_velocity, insp.reward.velocity.delta_alpha) == (0.15, 1.5)
    assert (insp.reward.survival, insp.reward.w_smoothness, insp.reward.w_angle) == (0.01, 0.02, 0.2)
    assert insp.reward.z.beta == 0.4 and base.reward.z.beta == 0.0
    assert [p.termination.v_max for p in (acro, base, insp)] == [1.0, 0.8, 0.2]
    assert [p.termination.omega_max_deg for p in (acro, base, insp)] == [530, 530, 115]
    assert base.termination.theta_g_max == pytest.approx(math.pi)
    assert insp.termination.theta_g_max is None
    assert insp.termination.roll_max == pytest.approx(math.radians(15))


def test_unknown_preset_names_valid_ones():
    with pytest.raises(ConfigError) as info:
        load_preset("aggressive")
    for name in PRESET_NAMES:
        assert name in str(info.value)


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_preset_dict_round_trip(name):
    p = load_preset(name)
    assert reward_from_dict(reward_to_dict(p.reward)) == p.reward


def test_reward_errors_carry_field_paths():
    data = reward_to_dict(load_preset("baseline").reward)
    data["xy"]["alpha"] = "high"
    with pytest.raises(ConfigError, match=r"reward\.xy\.alpha"):
        reward_from_dict(data)
    data = reward_to_dict(load_preset("baseline").reward)
    data["z"]["gamma"] = 1.0
    with pytest.raises(ConfigError, match=r"reward\.z"):
        reward_from_dict(data)
    data = reward_to_dict(load_preset("baseline").reward)
    data["xy"]["alpha"] = 0.9  # 0.9 + 0.4 != 1
    with pytest.raises(ConfigError, match=r"reward\.xy"):
        reward_from_dict(data)


def test_termination_errors_carry_field_paths():
    with pytest.raises(ConfigError, match=r"termination\.v_max"):
        termination_from_dict({"v_max": "fast"})
    with pytest.raises(ConfigError, match="termination"):
        termination_from_dict({"v_max": -1.0})


def test_default_parameter_file_matches_dataclass_defaults():
    assert default_quadrotor_params() == QuadrotorParams()


def test_minimal_config():
    cfg = parse_config("preset: inspection\n")
    assert cfg.preset == "inspection"
    assert cfg.reward == load_preset("inspection").reward
    assert cfg.seeds == (0,)


def test_overrides_merge_into_preset():
    cfg = parse_config(
        """
preset: baseline
reward: {velocity: {weight: 0.2}}
termination: {v_max: 0.6}
ppo: {total_timesteps: 49152, clip_range: 0.2}
quadrotor: {drag: [0.01, 0.01, 0.02]}
seeds: [1, 2, 3]
out: runs/x
"""
    )
    assert cfg.reward.w_velocity == 0.2
    assert cfg.reward.velocity == load_preset("baseline").reward.velocity
    assert cfg.termination.v_max == 0.6 and cfg.termination.omega_max_deg == 530
    assert cfg.ppo.total_timesteps == 49152 and cfg.ppo.clip_range == 0.2
    assert cfg.quadrotor.drag == (0.01, 0.01, 0.02)
    assert cfg.seeds == (1, 2, 3) and cfg.out == "runs/x"


def test_switching_to_split_angle_bounds():
    cfg = parse_config("preset: baseline\ntermination: {roll_max_deg: 20, pitch_max_deg: 25}\n")
    assert cfg.termination.theta_g_max_deg is None
    assert cfg.termination.pitch_max_deg == 25


def test_inline_reward_and_termination():
    base = load_preset("baseline")
    text = yaml.safe_dump({"reward": reward_to_dict(base.reward), "termination": {"v_max": 0.5}})
    cfg = parse_config(text)
    assert cfg.preset is None and cfg.reward == base.reward and cfg.termination.v_max == 0.5
    assert cfg.as_preset().name == "custom"


@pytest.mark.parametrize(
    "text,path",
    [
        ("preset: baseline\nppo: {batch_size: 1.5}\n", "ppo.batch_size"),
        ("preset: baseline\nppo: {clip: 0.2}\n", "ppo"),
        ("preset: baseline\nquadrotor: {mass: -1}\n", "quadrotor"),
        ("preset: baseline\nobservation: {sigma_p: x}\n", "observation.sigma_p"),
        ("preset: baseline\nseeds: []\n", "seeds"),
        ("preset: baseline\nextra: 1\n", "config"),
        ("reward: {}\n", "config"),
        ("preset: nope\n", "preset"),
        ("preset: [unclosed\n", ""),
    ],
)
def test_invalid_configs(text, path):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert str(info.value).startswith(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "none.yaml")


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_serialize_parse_is_identity(name):
    cfg = ExperimentConfig.from_preset(name, seeds=(0, 1, 2, 3, 4), out="runs/" + name)
    text = serialize_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert serialize_config(again) == text


@settings(max_examples=30, deadline=None)
@given(
    v_max=st.floats(0.01, 10), lr=st.floats(1e-6, 1e-2), weight=st.floats(0, 1),
    drag=st.tuples(*[st.floats(0, 1)] * 3), seeds=st.lists(st.integers(0, 2**31), min_size=1, max_size=5),
)
def test_round_trip_is_bit_exact_for_arbitrary_values(v_max, lr, weight, drag, seeds):
    cfg = config_from_dict({
        "preset": "acrobatic",
        "termination": {"v_max": v_max},
        "reward": {"angle": {"weight": weight}},
        "ppo": {"learning_rate": lr},
        "quadrotor": {"drag": list(drag)},
        "seeds": seeds,
    })
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    assert again.ppo.learning_rate.hex() == cfg.ppo.learning_rate.hex()
