"""
Quaternion helpers for attitude representation.

All quaternions are numpy arrays stored scalar-last, ``q = [x, y, z, w]``,
and multiplied with the Hamilton convention. A unit quaternion ``q`` maps
body-frame vectors into the inertial frame: ``v_I = Im(q ⊗ [v_B, 0] ⊗ q*)``.

Euler angles use the intrinsic Z-Y-X (yaw, pitch, roll) sequence.

The ``_``-prefixed kernels are numba-compiled and skip validation; the
dynamics integrator calls them directly.
"""

import numba
import numpy as np

from .errors import InvalidInputError

UNIT_TOLERANCE = 1e-6
IDENTITY = np.array([0.0, 0.0, 0.0, 1.0])


@numba.njit(cache=True)
def _qmul(a, b):
    ax, ay, az, aw = a[0], a[1], a[2], a[3]
    bx, by, bz, bw = b[0], b[1], b[2], b[3]
    out = np.empty(4)
    out[0] = aw * bx + ax * bw + ay * bz - az * by
    out[1] = aw * by - ax * bz + ay * bw + az * bx
    out[2] = aw * bz + ax * by - ay * bx + az * bw
    out[3] = aw * bw - ax * bx - ay * by - az * bz
    return out


@numba.njit(cache=True)
def _rotate(q, v):
    # Im(q ⊗ [v, 0] ⊗ q*), expanded; equals R(q) v for unit q.
    x, y, z, w = q[0], q[1], q[2], q[3]
    # t = 2 (q_vec × v)
    tx = 2.0 * (y * v[2] - z * v[1])
    ty = 2.0 * (z * v[0] - x * v[2])
    tz = 2.0 * (x * v[1] - y * v[0])
    out = np.empty(3)
    out[0] = v[0] + w * tx + (y * tz - z * ty)
    out[1] = v[1] + w * ty + (z * tx - x * tz)
    out[2] = v[2] + w * tz + (x * ty - y * tx)
    return out


@numba.njit(cache=True)
def _error(q_current, q_target):
    conj = np.empty(4)
    conj[0] = -q_target[0]
    conj[1] = -q_target[1]
    conj[2] = -q_target[2]
    conj[3] = q_target[3]
    e = _qmul(conj, q_current)
    e = e / np.sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2] + e[3] * e[3])
    flip = e[3] < 0.0
    if e[3] == 0.0:
        # 180° rotation: pick the representative whose first nonzero of (z, y, x) is positive
        for i in (2, 1, 0):
            if e[i] != 0.0:
                flip = e[i] < 0.0
                break
    if flip:
        e = -e
    e[3] = abs(e[3])  # drop a -0.0 left by the flip
    return e


@numba.njit(cache=True)
def _geodesic(q_e):
    vn = np.sqrt(q_e[0] * q_e[0] + q_e[1] * q_e[1] + q_e[2] * q_e[2])
    return 2.0 * np.arctan2(vn, abs(q_e[3]))


def _as_quat(q):
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise InvalidInputError(f"quaternion must have shape (4,), got {q.shape}")
    return q


def _require_unit(q, name="q"):
    n = float(np.dot(q, q))
    if not np.isfinite(n) or abs(np.sqrt(n) - 1.0) > UNIT_TOLERANCE:
        raise InvalidInputError(f"{name} is not a unit quaternion (norm={np.sqrt(n):.3g})")


def quat_multiply(a, b):
    """Hamilton product ``a ⊗ b`` (inputs need not be unit)."""
    return _qmul(_as_quat(a), _as_quat(b))


def quat_conjugate(q):
    q = _as_quat(q)
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_normalize(q):
    q = _as_quat(q)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise InvalidInputError("cannot normalize a zero or non-finite quaternion")
    return q / n


def rotate_vector(q, v):
    """
    Rotate a 3-vector by the unit quaternion ``q``.

    Parameters
    ----------
    q : array_like, shape (4,)
        Unit quaternion ``[x, y, z, w]``; must be unit within 1e-6.
    v : array_like, shape (3,)

    Returns
    -------
    np.ndarray, shape (3,)
        The vector part of ``q ⊗ [v, 0] ⊗ q*``.
    """
    q = _as_quat(q)
    _require_unit(q)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise InvalidInputError(f"vector must have shape (3,), got {v.shape}")
    return _rotate(q, v)


def rotation_matrix(q):
    """Rotation matrix R(q) such that ``R @ v == rotate_vector(q, v)``."""
    q = _as_quat(q)
    _require_unit(q)
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def error_quaternion(q_current, q_target):
    """
    Attitude error ``q_target* ⊗ q_current``, normalized, with ``w >= 0``.

    The sign is chosen so the error lies on the short path; for an exact
    180° error (``w == 0``) the first nonzero of ``(z, y, x)`` is made positive.
    """
    q_current = _as_quat(q_current)
    q_target = _as_quat(q_target)
    _require_unit(q_current, "q_current")
    _require_unit(q_target, "q_target")
    return _error(q_current, q_target)


def geodesic_angle(q_e):
    """Rotation angle ``2·atan2(|v|, |w|)`` of an error quaternion, in [0, π]."""
    return float(_geodesic(_as_quat(q_e)))


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise InvalidInputError("rotation axis must be nonzero")
    s = np.sin(0.5 * angle)
    return np.append(axis / n * s, np.cos(0.5 * angle))


def quat_from_euler(roll, pitch, yaw):
    """Quaternion for intrinsic Z-Y-X angles: yaw about z, then pitch about y', then roll about x''."""
    cr, sr = np.cos(0.5 * roll), np.sin(0.5 * roll)
    cp, sp = np.cos(0.5 * pitch), np.sin(0.5 * pitch)
    cy, sy = np.cos(0.5 * yaw), np.sin(0.5 * yaw)
    return np.array(
        [
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
            cr * cp * cy + sr * sp * sy,
        ]
    )


def euler_from_quaternion(q):
    """
    Intrinsic Z-Y-X Euler angles ``(roll, pitch, yaw)`` of a unit quaternion.

    Near ``|pitch| = π/2`` roll and yaw are not separable; the pitch argument
    is clipped to [-1, 1] and the returned roll/yaw split is best effort.
    """
    x, y, z, w = _as_quat(q)
    roll = np.arctan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    pitch = np.arcsin(np.clip(2.0 * (w * y - z * x), -1.0, 1.0))
    yaw = np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    return float(roll), float(pitch), float(yaw)


def wrap_angle(a):
    """Wrap angles into (-π, π]."""
    a = np.asarray(a, dtype=np.float64)
    out = np.pi - np.mod(np.pi - a, 2.0 * np.pi)
    return float(out) if out.ndim == 0 else out
