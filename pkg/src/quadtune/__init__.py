"""Reward and termination shaping for PPO quadrotor stabilization."""

from .dynamics import QuadrotorParams, QuadrotorState
from .env import QuadrotorEnv, RewardSpec, TerminationSpec
from .errors import (
    CheckpointVersionError,
    ConfigError,
    EnvUsageError,
    InvalidInputError,
    NumericalDivergenceError,
    QuadtuneError,
)
from .presets import PRESET_NAMES, load_preset

__version__ = "0.1.0"
