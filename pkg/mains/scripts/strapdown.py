"""
Strapdown INS mechanization in a local ENU navigation frame.

First-order scheme (no coning/sculling), the exact map the filter linearizes:
    s = s~ - o_a,  w = w~ - o_w
    p' = p + v Ts + (R s + g) Ts^2 / 2
    v' = v + (R s + g) Ts
    q' = q (x) exp_q(w Ts)
Earth rotation and transport rate are neglected.
"""

from dataclasses import dataclass, field, replace

import numpy as np
# custom fxs
from scripts.geom import IDENTITY_QUAT, quat_exp, quat_mul, quat_to_rot
from scripts.magmodel import PoseDelta

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class NavState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    oa: np.ndarray = field(default_factory=lambda: np.zeros(3))     # accelerometer bias, m/s^2
    ow: np.ndarray = field(default_factory=lambda: np.zeros(3))     # gyro bias, rad/s

    @property
    def R(self):
        return quat_to_rot(self.q)

    def is_finite(self):
        return all(np.all(np.isfinite(x)) for x in (self.p, self.v, self.q, self.oa, self.ow))


@dataclass(frozen=True)
class ImuSample:
    s: np.ndarray       # specific force, m/s^2, body frame
    w: np.ndarray       # angular rate, rad/s, body frame
    t: float = 0.0


def corrected_inputs(x: NavState, u: ImuSample):
    """ bias-corrected specific force and angular rate """
    return np.asarray(u.s, dtype=float) - x.oa, np.asarray(u.w, dtype=float) - x.ow


def propagate(x: NavState, u: ImuSample, Ts: float, g=GRAVITY) -> NavState:
    """ one step of the navigation equations with zero noise """
    s, w = corrected_inputs(x, u)
    acc = x.R @ s + g
    return replace(
        x,
        p=x.p + x.v * Ts + acc * Ts ** 2 / 2.0,
        v=x.v + acc * Ts,
        q=quat_mul(x.q, quat_exp(w * Ts)))


def pose_delta(x: NavState, u: ImuSample, Ts: float, g=GRAVITY) -> PoseDelta:
    """
    Body-frame change over the step: dp = R^T (v Ts + (R s + g) Ts^2/2)
    expressed in the departing body frame, dphi = (w~ - o_w) Ts.
    """
    s, w = corrected_inputs(x, u)
    R = x.R
    dp = R.T @ (x.v * Ts + (R @ s + g) * Ts ** 2 / 2.0)
    return PoseDelta(dp=dp, dphi=w * Ts)


def dead_reckon(x0: NavState, samples, times, g=GRAVITY):
    """ pure INS trajectory: list of NavState, one per timestamp """
    states = [x0]
    for k in range(len(times) - 1):
        states.append(propagate(states[-1], samples[k], times[k + 1] - times[k], g))
    return states
