r"""
Rigid-body quadrotor model: motor mixing and fixed-step RK4 integration.

State layout of the flat 13-vector used by the integrator::

    [px, py, pz, qx, qy, qz, qw, vx, vy, vz, wx, wy, wz]

Motor layout (× configuration, body x forward, y left, z up, viewed from above)::

        M4 (CW)     M1 (CCW)
              \     /
               \ ^ /
                 X        x forward
               /   \
              /     \
        M3 (CCW)    M2 (CW)

Sign table used by :func:`motor_forces` (``f_i = k_f·rpm_i²``, ``m_i = k_m·rpm_i²``,
``l = d/√2``)::

    motor  position    roll τx   pitch τy   yaw τz   prop spin
    M1     (+l, -l)    -l·f1     -l·f1      -m1      CCW
    M2     (-l, -l)    -l·f2     +l·f2      +m2      CW
    M3     (-l, +l)    +l·f3     +l·f3      -m3      CCW
    M4     (+l, +l)    +l·f4     -l·f4      +m4      CW

Roll and pitch columns are ``r_i × (0, 0, f_i)``; a CCW-spinning prop
drags the body clockwise, hence ``-m_i``.
"""

from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import NamedTuple

import numba
import numpy as np

from .errors import InvalidInputError, NumericalDivergenceError
from .quat import _qmul, _rotate

STATE_SIZE = 13

# rows: motors M1..M4, columns: (x sign, y sign) of the arm, yaw reaction sign
MOTOR_X_SIGN = np.array([1.0, -1.0, -1.0, 1.0])
MOTOR_Y_SIGN = np.array([-1.0, -1.0, 1.0, 1.0])
YAW_SIGN = np.array([-1.0, 1.0, -1.0, 1.0])


@dataclass(frozen=True)
class QuadrotorParams:
    """Physical parameters; defaults are the Crazyflie 2.1 values."""

    mass: float = 0.033
    arm_length: float = 39.73e-3
    thrust_coefficient: float = 3.16e-10  # N / RPM²
    moment_coefficient: float = 7.49e-12  # N·m / RPM²
    propeller_radius: float = 23.1348e-3
    inertia: tuple = (1.395e-5, 1.436e-5, 2.173e-5)  # diagonal, kg·m²
    drag: tuple = (0.0, 0.0, 0.0)  # diagonal, N·s/m
    gravity: float = 9.81
    max_rpm: float = 24000.0

    def __post_init__(self):
        object.__setattr__(self, "inertia", tuple(float(v) for v in self.inertia))
        object.__setattr__(self, "drag", tuple(float(v) for v in self.drag))
        for name in ("mass", "arm_length", "thrust_coefficient", "moment_coefficient", "max_rpm", "gravity"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if len(self.inertia) != 3 or min(self.inertia) <= 0:
            raise InvalidInputError("inertia must be 3 positive diagonal entries")
        if len(self.drag) != 3 or min(self.drag) < 0:
            raise InvalidInputError("drag must be 3 non-negative diagonal entries")

    @cached_property
    def inertia_diag(self):
        return np.array(self.inertia)

    @cached_property
    def drag_diag(self):
        return np.array(self.drag)

    @property
    def hover_rpm(self):
        """Per-motor speed at which total thrust balances gravity."""
        return float(np.sqrt(self.gravity * self.mass / (4.0 * self.thrust_coefficient)))

    def to_dict(self):
        d = asdict(self)
        d["inertia"] = list(self.inertia)
        d["drag"] = list(self.drag)
        return d


@dataclass
class QuadrotorState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quaternion: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.quaternion = np.asarray(self.quaternion, dtype=np.float64)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=np.float64)

    @classmethod
    def hover(cls, position=(0.0, 0.0, 1.0)):
        return cls(position=np.array(position, dtype=np.float64))

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=np.float64)
        return cls(x[0:3].copy(), x[3:7].copy(), x[7:10].copy(), x[10:13].copy())

    def to_vector(self):
        return np.concatenate([self.position, self.quaternion, self.velocity, self.angular_velocity])

    def is_finite(self):
        return bool(np.all(np.isfinite(self.to_vector())))


class StateDerivative(NamedTuple):
    position: np.ndarray
    quaternion: np.ndarray
    velocity: np.ndarray
    angular_velocity: np.ndarray


def motor_forces(rpm, params):
    """
    Body-frame thrust and torque produced by four motor speeds.

    Parameters
    ----------
    rpm : array_like, shape (4,)
        Motor speeds M1..M4 in RPM, each within ``[0, params.max_rpm]``.
    params : QuadrotorParams

    Returns
    -------
    thrust : np.ndarray, shape (3,)
        ``(0, 0, Σ k_f·rpm²)`` in newtons.
    torque : np.ndarray, shape (3,)
        Body torque in N·m, mixed per the module's sign table.
    """
    rpm = np.asarray(rpm, dtype=np.float64)
    if rpm.shape != (4,):
        raise InvalidInputError(f"expected 4 motor speeds, got shape {rpm.shape}")
    if not np.all(np.isfinite(rpm)) or rpm.min() < 0.0 or rpm.max() > params.max_rpm:
        raise InvalidInputError(f"motor speeds must lie in [0, {params.max_rpm}], got {rpm}")
    return _mix(rpm, params)


def _mix(rpm, params):
    sq = rpm * rpm
    forces = params.thrust_coefficient * sq
    lever = params.arm_length / np.sqrt(2.0)
    thrust = np.array([0.0, 0.0, forces.sum()])
    torque = np.array(
        [
            lever * np.dot(MOTOR_Y_SIGN, forces),
            -lever * np.dot(MOTOR_X_SIGN, forces),
            params.moment_coefficient * np.dot(YAW_SIGN, sq),
        ]
    )
    return thrust, torque


@numba.njit(cache=True)
def _derivative(x, thrust, torque, mass, gravity, inertia, drag):
    q = x[3:7]
    v = x[7:10]
    w = x[10:13]
    dx = np.empty(13)
    dx[0:3] = v
    acc = _rotate(q, thrust) / mass - drag * v / mass
    acc[2] -= gravity
    dx[7:10] = acc
    wq = np.zeros(4)
    wq[0:3] = w
    dx[3:7] = 0.5 * _qmul(q, wq)
    iw = inertia * w
    gyro = np.empty(3)
    gyro[0] = w[1] * iw[2] - w[2] * iw[1]
    gyro[1] = w[2] * iw[0] - w[0] * iw[2]
    gyro[2] = w[0] * iw[1] - w[1] * iw[0]
    dx[10:13] = (torque - gyro) / inertia
    return dx


@numba.njit(cache=True)
def _rk4(x, thrust, torque, mass, gravity, inertia, drag, dt, n_steps):
    for _ in range(n_steps):
        k1 = _derivative(x, thrust, torque, mass, gravity, inertia, drag)
        k2 = _derivative(x + 0.5 * dt * k1, thrust, torque, mass, gravity, inertia, drag)
        k3 = _derivative(x + 0.5 * dt * k2, thrust, torque, mass, gravity, inertia, drag)
        k4 = _derivative(x + dt * k3, thrust, torque, mass, gravity, inertia, drag)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        q = x[3:7]
        x[3:7] = q / np.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    return x


def state_derivative(state, thrust, torque, params):
    """Time derivative of every state field under constant body thrust and torque."""
    dx = _derivative(
        state.to_vector(),
        np.asarray(thrust, dtype=np.float64),
        np.asarray(torque, dtype=np.float64),
        params.mass,
        params.gravity,
        params.inertia_diag,
        params.drag_diag,
    )
    return StateDerivative(dx[0:3], dx[3:7], dx[7:10], dx[10:13])


def integrate(x, thrust, torque, params, dt, n_steps=1):
    """
    Advance a flat state vector by ``n_steps`` RK4 steps of ``dt`` with the
    wrench held constant, renormalizing the quaternion after each step.
    """
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    out = _rk4(
        np.asarray(x, dtype=np.float64),
        np.asarray(thrust, dtype=np.float64),
        np.asarray(torque, dtype=np.float64),
        params.mass,
        params.gravity,
        params.inertia_diag,
        params.drag_diag,
        float(dt),
        int(n_steps),
    )
    if not np.all(np.isfinite(out)):
        raise NumericalDivergenceError("non-finite state after integration", QuadrotorState.from_vector(out))
    return out


def step(state, rpm, params, dt):
    """One RK4 step of length ``dt`` under the motor command ``rpm``."""
    thrust, torque = motor_forces(rpm, params)
    return QuadrotorState.from_vector(integrate(state.to_vector(), thrust, torque, params, dt))
