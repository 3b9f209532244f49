"""
Hover-stabilization environment around the rigid-body model.

Observation layout (17 entries)::

    [ex, ey, ez, qex, qey, qez, qew, vx, vy, vz, wx, wy, wz, a1, a2, a3, a4]

Position error, error quaternion, inertial velocity and body rates carry
Gaussian noise; the previous action is appended untouched. Rewards and
termination always use the true state.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import dynamics
from .dynamics import QuadrotorParams, QuadrotorState
from .errors import EnvUsageError, InvalidInputError
from .quat import IDENTITY, _error, _geodesic, euler_from_quaternion, quat_from_euler

OBS_SIZE = 17
ACTION_SIZE = 4
CONTROL_DT = 0.01
PHYSICS_SUBSTEPS = 5
TARGET_POSITION = (0.0, 0.0, 1.0)

REWARD_TERMS = ("survival", "xy", "z", "velocity", "angle", "smoothness")


@dataclass(frozen=True)
class ExpReward:
    """``alpha·exp(-delta_alpha·x²) + beta·exp(-delta_beta·x²)``; single bandwidth when ``beta == 0``."""

    delta_alpha: float
    alpha: float = 1.0
    delta_beta: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise InvalidInputError(f"bandwidth weights must be non-negative and sum to 1, got {self.alpha}+{self.beta}")
        if not (self.delta_alpha > 0 and self.delta_beta > 0):
            raise InvalidInputError("bandwidth sharpness values must be positive")

    def __call__(self, sq_error):
        out = self.alpha * math.exp(-self.delta_alpha * sq_error)
        if self.beta:
            out += self.beta * math.exp(-self.delta_beta * sq_error)
        return out


@dataclass(frozen=True)
class RewardSpec:
    survival: float
    w_xy: float
    w_z: float
    w_velocity: float
    w_angle: float
    w_smoothness: float
    xy: ExpReward
    z: ExpReward
    velocity: ExpReward
    angle: ExpReward

    def __post_init__(self):
        for name in ("w_xy", "w_z", "w_velocity", "w_angle", "w_smoothness"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"reward weight {name} must be non-negative")

    @property
    def upper_bound(self):
        return self.survival + self.w_xy + self.w_z + self.w_velocity + self.w_angle

    @property
    def lower_bound(self):
        # largest possible ‖a_t - a_{t-1}‖² on [-1, 1]⁴ is 4·2² = 16
        return self.survival - 16.0 * self.w_smoothness


@dataclass(frozen=True)
class TerminationSpec:
    """
    Failure bounds plus the episode horizon.

    Angle bounds are stored in degrees (radian views are properties).
    Exactly one of ``theta_g_max_deg`` or the roll/pitch pair is active.
    """

    z_min: float = 0.1
    p_e_max: float = 3.0
    theta_g_max_deg: Optional[float] = 180.0
    roll_max_deg: Optional[float] = None
    pitch_max_deg: Optional[float] = None
    v_max: float = 0.8
    omega_max_deg: float = 530.0
    horizon: float = 10.0

    def __post_init__(self):
        split = self.roll_max_deg is not None or self.pitch_max_deg is not None
        if split == (self.theta_g_max_deg is not None):
            raise InvalidInputError("use either theta_g_max_deg or roll_max_deg/pitch_max_deg, not both or neither")
        if split and (self.roll_max_deg is None or self.pitch_max_deg is None):
            raise InvalidInputError("roll_max_deg and pitch_max_deg must be given together")
        for name in (
            "z_min", "p_e_max", "theta_g_max_deg", "roll_max_deg", "pitch_max_deg", "v_max", "omega_max_deg", "horizon"
        ):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise InvalidInputError(f"termination bound {name} must be positive")

    @staticmethod
    def _rad(deg):
        return None if deg is None else math.radians(deg)

    @property
    def theta_g_max(self):
        return self._rad(self.theta_g_max_deg)

    @property
    def roll_max(self):
        return self._rad(self.roll_max_deg)

    @property
    def pitch_max(self):
        return self._rad(self.pitch_max_deg)

    @property
    def omega_max(self):
        """Angular-rate bound in rad/s."""
        return math.radians(self.omega_max_deg)


@dataclass(frozen=True)
class ObservationSpec:
    sigma_p: float = 1e-3
    sigma_q: float = 2e-3
    sigma_v: float = 1e-3
    sigma_w: float = 2e-3

    def __post_init__(self):
        if min(self.sigma_p, self.sigma_q, self.sigma_v, self.sigma_w) < 0:
            raise InvalidInputError("noise standard deviations must be non-negative")

    @property
    def sigma_vector(self):
        return np.repeat([self.sigma_p, self.sigma_q, self.sigma_v, self.sigma_w], [3, 4, 3, 3])


@dataclass(frozen=True)
class InitSpec:
    """Uniform ranges for random initial states (angles in degrees)."""

    xy_range: tuple = (-2.0, 2.0)
    z_range: tuple = (0.0, 2.0)
    tilt_range_deg: tuple = (-15.0, 15.0)
    yaw_range_deg: tuple = (-180.0, 180.0)


@dataclass(frozen=True)
class TerminationCheck:
    terminated: bool = False
    truncated: bool = False
    reason: Optional[str] = None

    @property
    def done(self):
        return self.terminated or self.truncated


RUNNING = TerminationCheck()


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    info: dict = field(default_factory=dict)


def action_to_rpm(action, params):
    """Map normalized actions to motor speeds: ``rpm = rpm_hover·(1 + a/2)``, clipped to ``[0, max_rpm]``."""
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    return np.clip(params.hover_rpm * (1.0 + 0.5 * a), 0.0, params.max_rpm)


def compute_reward(state, target_position, action, prev_action, spec, target_attitude=IDENTITY):
    """
    Shaped hover reward from the true state.

    Returns
    -------
    reward : float
        Sum of the breakdown entries, added in ``REWARD_TERMS`` order.
    breakdown : dict
        Weighted contribution of each term; ``smoothness`` is already negative.
    """
    err = state.position - np.asarray(target_position, dtype=np.float64)
    q_e = _error(state.quaternion, np.asarray(target_attitude, dtype=np.float64))
    theta = _geodesic(q_e)
    v = state.velocity
    da = np.asarray(action, dtype=np.float64) - np.asarray(prev_action, dtype=np.float64)
    breakdown = {
        "survival": spec.survival,
        "xy": spec.w_xy * spec.xy(err[0] * err[0] + err[1] * err[1]),
        "z": spec.w_z * spec.z(err[2] * err[2]),
        "velocity": spec.w_velocity * spec.velocity(float(v @ v)),
        "angle": spec.w_angle * spec.angle(theta * theta),
        "smoothness": -spec.w_smoothness * float(da @ da),
    }
    reward = 0.0
    for term in REWARD_TERMS:
        reward += breakdown[term]
    return reward, breakdown


def check_termination(state, target_position, spec, elapsed, target_attitude=IDENTITY):
    """
    Evaluate failure bounds, then the time horizon.

    A violated bound wins over the horizon, so ``terminated`` and
    ``truncated`` are never both set. ``reason`` is one of ``altitude``,
    ``position``, ``attitude``, ``roll``, ``pitch``, ``velocity``,
    ``angular_velocity`` or ``horizon``.
    """
    p = state.position
    if p[2] < spec.z_min:
        return TerminationCheck(terminated=True, reason="altitude")
    if np.linalg.norm(p - np.asarray(target_position, dtype=np.float64)) > spec.p_e_max:
        return TerminationCheck(terminated=True, reason="position")
    if spec.theta_g_max_deg is not None:
        q_e = _error(state.quaternion, np.asarray(target_attitude, dtype=np.float64))
        if _geodesic(q_e) > spec.theta_g_max:
            return TerminationCheck(terminated=True, reason="attitude")
    else:
        roll, pitch, _ = euler_from_quaternion(state.quaternion)
        if abs(roll) > spec.roll_max:
            return TerminationCheck(terminated=True, reason="roll")
        if abs(pitch) > spec.pitch_max:
            return TerminationCheck(terminated=True, reason="pitch")
    if np.linalg.norm(state.velocity) > spec.v_max:
        return TerminationCheck(terminated=True, reason="velocity")
    if np.linalg.norm(state.angular_velocity) > spec.omega_max:
        return TerminationCheck(terminated=True, reason="angular_velocity")
    if elapsed >= spec.horizon - 1e-9:
        return TerminationCheck(truncated=True, reason="horizon")
    return RUNNING


def make_observation(state, target_position, prev_action, spec, rng, target_attitude=IDENTITY):
    """Noisy 17-entry observation; ``rng`` is a ``numpy.random.Generator``."""
    obs = np.empty(OBS_SIZE)
    obs[0:3] = state.position - np.asarray(target_position, dtype=np.float64)
    obs[3:7] = _error(state.quaternion, np.asarray(target_attitude, dtype=np.float64))
    obs[7:10] = state.velocity
    obs[10:13] = state.angular_velocity
    obs[0:13] += spec.sigma_vector * rng.standard_normal(13)
    obs[13:17] = np.clip(prev_action, -1.0, 1.0)
    return obs


def sample_initial_state(rng, spec=InitSpec()):
    x, y = rng.uniform(*spec.xy_range, size=2)
    z = rng.uniform(*spec.z_range)
    roll, pitch = np.radians(rng.uniform(*spec.tilt_range_deg, size=2))
    yaw = np.radians(rng.uniform(*spec.yaw_range_deg))
    return QuadrotorState(position=np.array([x, y, z]), quaternion=quat_from_euler(roll, pitch, yaw))


class QuadrotorEnv:
    """
    Single hover-task environment stepping at 100 Hz.

    Each control step holds the motor command for ``PHYSICS_SUBSTEPS`` RK4
    steps of ``CONTROL_DT / PHYSICS_SUBSTEPS`` seconds. ``recorder``, if
    given, is called once after every reset and every step with a dict
    describing the transition.
    """

    def __init__(
        self,
        reward: RewardSpec,
        termination: TerminationSpec,
        params: Optional[QuadrotorParams] = None,
        observation: Optional[ObservationSpec] = None,
        init: Optional[InitSpec] = None,
        seed: Optional[int] = None,
        target_position=TARGET_POSITION,
        recorder: Optional[Callable[[dict], None]] = None,
    ):
        self.reward_spec = reward
        self.termination_spec = termination
        self.params = params or QuadrotorParams()
        self.observation_spec = observation or ObservationSpec()
        self.init_spec = init or InitSpec()
        self.target_position = np.asarray(target_position, dtype=np.float64)
        self.target_attitude = IDENTITY.copy()
        self.recorder = recorder
        self.rng = np.random.default_rng(seed)
        self._x = None
        self.prev_action = np.zeros(ACTION_SIZE)
        self.steps = 0
        self.done = True

    @property
    def state(self):
        return QuadrotorState.from_vector(self._x)

    @property
    def elapsed(self):
        return self.steps * CONTROL_DT

    def set_state(self, state):
        """Overwrite the simulated state (used by scripted test controllers)."""
        self._x = state.to_vector()

    def observe(self):
        return make_observation(
            self.state, self.target_position, self.prev_action, self.observation_spec, self.rng, self.target_attitude
        )

    def reset(self, seed=None, state=None):
        """
        Start a new episode from ``state`` or a random initial state.

        Returns
        -------
        state : QuadrotorState
        observation : np.ndarray, shape (17,)
        """
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        if state is None:
            state = sample_initial_state(self.rng, self.init_spec)
        self._x = state.to_vector()
        self.prev_action = np.zeros(ACTION_SIZE)
        self.steps = 0
        self.done = False
        obs = self.observe()
        if self.recorder is not None:
            self.recorder(
                {"t": 0.0, "state": self._x.copy(), "action": np.zeros(ACTION_SIZE),
                 "rpm": np.full(ACTION_SIZE, self.params.hover_rpm), "reward": 0.0, "reward_terms": {},
                 "terminated": False, "truncated": False, "reason": None}
            )
        return self.state, obs

    def step(self, action):
        if self.done:
            raise EnvUsageError("step() called on a finished episode; call reset() first")
        action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        if action.shape != (ACTION_SIZE,):
            raise InvalidInputError(f"action must have shape ({ACTION_SIZE},), got {action.shape}")
        rpm = action_to_rpm(action, self.params)
        thrust, torque = dynamics._mix(rpm, self.params)
        self._x = dynamics.integrate(
            self._x, thrust, torque, self.params, CONTROL_DT / PHYSICS_SUBSTEPS, PHYSICS_SUBSTEPS
        )
        self.steps += 1
        state = self.state
        reward, terms = compute_reward(
            state, self.target_position, action, self.prev_action, self.reward_spec, self.target_attitude
        )
        check = check_termination(
            state, self.target_position, self.termination_spec, self.elapsed, self.target_attitude
        )
        self.prev_action = action
        self.done = check.done
        obs = self.observe()
        if self.recorder is not None:
            self.recorder(
                {"t": self.elapsed, "state": self._x.copy(), "action": action, "rpm": rpm, "reward": reward,
                 "reward_terms": terms, "terminated": check.terminated, "truncated": check.truncated,
                 "reason": check.reason}
            )
        return StepOutcome(
            observation=obs,
            reward=reward,
            terminated=check.terminated,
            truncated=check.truncated,
            info={"reward_terms": terms, "reason": check.reason, "t": self.elapsed, "rpm": rpm},
        )
