"""
Attitude and small-rotation algebra shared by the navigation, field-model and
simulation modules.

Quaternions are numpy arrays in scalar-first order (w, x, y, z) and rotate
body-frame vectors into the navigation frame. Every public function returning
a quaternion returns a unit quaternion.
"""

import numpy as np
from scipy.spatial.transform import Rotation

SMALL_ANGLE = 1e-8

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def skew(v):
    """ [v]x such that skew(v) @ b == np.cross(v, b) """
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def quat_exp(v):
    """
    Maps an axis-angle vector (rad) to a unit quaternion,
    (cos(|v|/2), sin(|v|/2) v/|v|), with a 2nd-order series below SMALL_ANGLE.
    """
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    if angle < SMALL_ANGLE:
        q = np.concatenate(([1.0 - angle ** 2 / 8.0], 0.5 * v * (1.0 - angle ** 2 / 24.0)))
    else:
        q = np.concatenate(([np.cos(angle / 2.0)], np.sin(angle / 2.0) * v / angle))
    return normalize(q)


def quat_log(q):
    """ inverse of quat_exp on the hemisphere w >= 0, returns the rotation vector (rad) """
    q = normalize(q)
    if q[0] < 0:
        q = -q
    vec_norm = np.linalg.norm(q[1:])
    if vec_norm < SMALL_ANGLE:
        return 2.0 * q[1:] / q[0]
    angle = 2.0 * np.arctan2(vec_norm, q[0])
    return angle * q[1:] / vec_norm


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_matrix(a):
    """ left-multiplication matrix L(a) with a (x) b == L(a) @ b """
    w, x, y, z = a
    return np.array([[w, -x, -y, -z],
                     [x, w, -z, y],
                     [y, z, w, -x],
                     [z, -y, x, w]])


def quat_mul(a, b):
    """ Hamilton product a (x) b, renormalized """
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    q = np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw])
    return normalize(q)


def quat_to_rot(q):
    """ rotation matrix R(q) (body -> navigation) """
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])


def rot_to_quat(R):
    """ unit quaternion (w >= 0) of a rotation matrix """
    q = np.roll(Rotation.from_matrix(R).as_quat(), 1)
    return normalize(q if q[0] >= 0 else -q)


def error_quat(eps):
    """ small-perturbation quaternion [1, eps/2], normalized """
    eps = np.asarray(eps, dtype=float)
    return normalize(np.concatenate(([1.0], 0.5 * eps)))


def rot_exp(v):
    """ exp([v]x) as a 3x3 matrix (Rodrigues) """
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    K = skew(v)
    if angle < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    return (np.eye(3) + np.sin(angle) / angle * K
            + (1.0 - np.cos(angle)) / angle ** 2 * K @ K)


def rot_log(R):
    """ rotation vector of R """
    return Rotation.from_matrix(R).as_rotvec()


def right_jacobian(v):
    """
    Right Jacobian of SO(3): exp([v + d]x) ~= exp([v]x) exp([J_r(v) d]x).
    """
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    K = skew(v)
    if angle < 1e-5:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    return (np.eye(3) - (1.0 - np.cos(angle)) / angle ** 2 * K
            + (angle - np.sin(angle)) / angle ** 3 * K @ K)


def euler_to_quat(roll, pitch, yaw):
    """ ZYX (yaw-pitch-roll) angles to a quaternion """
    q = Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_quat()
    return normalize(np.roll(q, 1))


def level_attitude(specific_force, yaw=0.0):
    """ roll/pitch from a static accelerometer sample (ENU, z up) """
    fx, fy, fz = specific_force
    roll = np.arctan2(fy, fz)
    pitch = np.arctan2(-fx, np.hypot(fy, fz))
    return euler_to_quat(roll, pitch, yaw)


def skew_stack(vs):
    """ skew() applied to each row of an (n, 3) array, shape (n, 3, 3) """
    vs = np.atleast_2d(np.asarray(vs, dtype=float))
    out = np.zeros((vs.shape[0], 3, 3))
    out[:, 0, 1], out[:, 0, 2] = -vs[:, 2], vs[:, 1]
    out[:, 1, 0], out[:, 1, 2] = vs[:, 2], -vs[:, 0]
    out[:, 2, 0], out[:, 2, 1] = -vs[:, 1], vs[:, 0]
    return out
