"""
Maxwell-constrained polynomial model of the magnetic field around the array.

The field is the gradient of a scalar potential phi(r) = h(r)^T mu, where h(r)
holds every monomial x^i y^j z^k with 1 <= i+j+k <= l+1. Divergence-freeness
(a harmonic potential) is the linear constraint D mu = 0; writing
mu = Dperp theta leaves kappa = l^2 + 4l + 3 free coefficients and

    M(r; theta) = Gamma(r) Dperp theta = Phi(r) theta      [uT, r in m]

Monomials are ordered by total degree, and within a degree by descending
(i, j, k), so the first three entries of h are x, y, z. D only couples
monomials of equal degree (the Laplacian maps degree d to d-2), so Dperp is
assembled degree by degree and the first three theta entries are exactly the
uniform field.

Coefficients live in the body frame and are transported between consecutive
body frames with theta' = A^+ B(psi) theta.
"""

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import ceil

import numpy as np
import scipy.linalg
# custom fxs
from scripts.geom import rot_exp, right_jacobian, skew_stack
from scripts.utils.errors import DegenerateAnchorError, DegenerateGeometryError
from scripts.utils.logging_tools import logging_setup

NULL_SPACE_RCOND = 1e-10
DEFAULT_MAX_CONDITION = 1e6
SIGMA_MIN = 0.01  # uT


# ----- TYPES ----------------------------------------------------------------#
@dataclass(frozen=True, eq=False)
class FieldModel:
    order: int
    exponents: np.ndarray       # (L, 3) exponent triplets of h(r)
    D: np.ndarray               # divergence constraint matrix
    Dperp: np.ndarray           # (L, kappa) orthonormal null-space basis of D

    @property
    def L(self):
        return self.exponents.shape[0]

    @property
    def kappa(self):
        return self.Dperp.shape[1]


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """ magnetometer positions in the body frame (m), one row per sensor """
    positions: np.ndarray
    ids: tuple = None
    name: str = "array"
    anchors: np.ndarray = None  # explicit anchor points, None = choose by policy

    def __post_init__(self):
        positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        object.__setattr__(self, "positions", positions)
        if self.ids is None:
            object.__setattr__(self, "ids", tuple(range(len(positions))))

    @property
    def n_sensors(self):
        return self.positions.shape[0]


@dataclass(frozen=True, eq=False)
class AnchorSet:
    positions: np.ndarray       # (S, 3)
    A: np.ndarray               # (3S, kappa)
    Adag: np.ndarray            # (kappa, 3S)
    condition: float = field(default=np.nan)

    @property
    def S(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class PoseDelta:
    """ body-frame change b_k -> b_k+1: translation in b_k (m) and rotation vector (rad) """
    dp: np.ndarray
    dphi: np.ndarray

    @staticmethod
    def zero():
        return PoseDelta(np.zeros(3), np.zeros(3))


# ----- BASIS CONSTRUCTION ---------------------------------------------------#
def monomials_of_degree(d: int):
    """ exponent triplets (i, j, k) with i+j+k == d, descending lexicographic """
    out = []
    for combo in combinations_with_replacement(range(3), d):
        out.append(tuple(combo.count(axis) for axis in range(3)))
    return sorted(set(out), reverse=True)


def _laplacian_block(d: int):
    """ matrix taking degree-d monomial coefficients to their Laplacian (degree d-2) """
    cols = monomials_of_degree(d)
    rows = monomials_of_degree(d - 2)
    index = {e: n for n, e in enumerate(rows)}
    block = np.zeros((len(rows), len(cols)))
    for c, e in enumerate(cols):
        for axis in range(3):
            if e[axis] >= 2:
                target = list(e)
                target[axis] -= 2
                block[index[tuple(target)], c] += e[axis] * (e[axis] - 1)
    return block


def _fix_signs(basis):
    """ flips columns so the largest-magnitude entry of each is positive """
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def build_model(order: int) -> FieldModel:
    """
    Builds the order-l field model: exponent table, divergence constraint D
    and its null-space basis Dperp.
    """
    if int(order) != order or order < 1:
        raise ValueError(f"model order must be an integer >= 1, got {order}")
    order = int(order)
    degrees = range(1, order + 2)
    exponents = np.array([e for d in degrees for e in monomials_of_degree(d)], dtype=int)
    L = exponents.shape[0]

    n_rows = sum(len(monomials_of_degree(d - 2)) for d in degrees if d >= 2)
    D = np.zeros((n_rows, L))
    blocks = []
    row = col = 0
    for d in degrees:
        n_cols = len(monomials_of_degree(d))
        if d < 2:
            blocks.append(np.eye(n_cols))
        else:
            lap = _laplacian_block(d)
            D[row:row + lap.shape[0], col:col + n_cols] = lap
            row += lap.shape[0]
            blocks.append(_fix_signs(scipy.linalg.null_space(lap, rcond=NULL_SPACE_RCOND)))
        col += n_cols
    Dperp = scipy.linalg.block_diag(*blocks)
    return FieldModel(order=order, exponents=exponents, D=D, Dperp=Dperp)


# ----- EVALUATION -----------------------------------------------------------#
def _powers(points, max_power):
    """ pw[n, axis, p] = r_axis^p for p = 0..max_power """
    return points[:, :, None] ** np.arange(max_power + 1)[None, None, :]


def _monomials(pw, exps):
    """ prod_axis r_axis^e_axis for each row of exps, shape (n, L); negative exponents give 0 """
    safe = np.clip(exps, 0, None)
    vals = pw[:, 0, safe[:, 0]] * pw[:, 1, safe[:, 1]] * pw[:, 2, safe[:, 2]]
    return np.where((exps < 0).any(axis=1)[None, :], 0.0, vals)


def gamma_stack(model: FieldModel, points):
    """ Gamma(r) = grad h(r)^T for each point, shape (n, 3, L) """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    pw = _powers(points, model.order + 1)
    out = np.empty((points.shape[0], 3, model.L))
    for axis in range(3):
        exps = model.exponents.copy()
        exps[:, axis] -= 1
        out[:, axis, :] = model.exponents[:, axis] * _monomials(pw, exps)
    return out


def hessian_stack(model: FieldModel, points):
    """ second derivatives of h(r), shape (n, 3, 3, L) """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    pw = _powers(points, model.order + 1)
    out = np.empty((points.shape[0], 3, 3, model.L))
    for a in range(3):
        for b in range(a, 3):
            exps = model.exponents.copy()
            coef = model.exponents[:, a].astype(float)
            exps[:, a] -= 1
            coef = coef * exps[:, b]
            exps[:, b] -= 1
            out[:, a, b, :] = coef * _monomials(pw, exps)
            out[:, b, a, :] = out[:, a, b, :]
    return out


def phi_stack(model: FieldModel, points):
    """ Phi(r) for each point, shape (n, 3, kappa) """
    return gamma_stack(model, points) @ model.Dperp


def phi(model: FieldModel, r):
    """ regression matrix Phi(r) = Gamma(r) Dperp, shape (3, kappa) """
    return phi_stack(model, np.asarray(r, dtype=float).reshape(1, 3))[0]


def stacked_phi(model: FieldModel, points):
    """ vertically stacked Phi(r_1) ... Phi(r_n), shape (3n, kappa) """
    return phi_stack(model, points).reshape(-1, model.kappa)


def eval_field(model: FieldModel, theta, r):
    """ M(r; theta) in uT """
    return phi(model, r) @ np.asarray(theta, dtype=float)


def field_jacobian_stack(model: FieldModel, theta, points):
    """ dM/dr at each point, shape (n, 3, 3); symmetric and traceless """
    mu = model.Dperp @ np.asarray(theta, dtype=float)
    return hessian_stack(model, points) @ mu


def uniform_theta(model: FieldModel, m):
    """ coefficients of a uniform field m (uT) """
    theta = np.zeros(model.kappa)
    theta[:3] = m
    return theta


# ----- FITTING --------------------------------------------------------------#
def fit_theta(model: FieldModel, positions, readings):
    """
    Least-squares fit of theta to one array snapshot.

    input:
        positions: (N, 3) sensor positions (m)
        readings: stacked 3N-vector (uT), sensor-major

    returns:
        (theta_hat, sigma2_hat) with sigma2_hat = ||(I - X X^+) y||^2 / (3N)
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    y = np.asarray(readings, dtype=float).ravel()
    n_rows = 3 * positions.shape[0]
    if y.shape[0] != n_rows:
        raise DegenerateGeometryError(
            f"readings have {y.shape[0]} values, expected 3N = {n_rows}")
    if n_rows < model.kappa:
        raise DegenerateGeometryError(
            f"{positions.shape[0]} magnetometers give 3N = {n_rows} equations, "
            f"fewer than kappa = {model.kappa} unknowns for order {model.order}")
    X = stacked_phi(model, positions)
    rank = np.linalg.matrix_rank(X)
    if rank < model.kappa:
        raise DegenerateGeometryError(
            f"regressor X of {positions.shape[0]} magnetometers has rank {rank} < "
            f"kappa = {model.kappa} for order {model.order}; positions:\n{positions}")
    theta, *_ = scipy.linalg.lstsq(X, y)
    residual = y - X @ theta
    return theta, float(residual @ residual) / n_rows


def residual_variance(X, Xdag, y):
    """ sigma2_hat of a snapshot given a precomputed X and its pseudo-inverse """
    residual = y - X @ (Xdag @ y)
    return float(residual @ residual) / X.shape[0]


# ----- TRANSPORT ------------------------------------------------------------#
def _farthest_point_order(points):
    """ deterministic ordering: farthest from the centroid first, then farthest-point sampling """
    centroid = points.mean(axis=0)
    order = [int(np.argmax(np.linalg.norm(points - centroid, axis=1)))]
    dist = np.linalg.norm(points - points[order[0]], axis=1)
    while len(order) < len(points):
        nxt = int(np.argmax(dist))
        order.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return order


def anchor_set_from_points(model: FieldModel, points, max_condition=DEFAULT_MAX_CONDITION):
    """ builds A from explicit anchor points and checks rank and conditioning """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    A = stacked_phi(model, points)
    rank = np.linalg.matrix_rank(A)
    if rank < model.kappa:
        raise DegenerateAnchorError(
            f"anchor matrix A ({A.shape[0]}x{A.shape[1]}) from {points.shape[0]} anchors "
            f"has rank {rank} < kappa = {model.kappa}")
    condition = np.linalg.cond(A)
    if condition > max_condition:
        raise DegenerateAnchorError(
            f"anchor matrix A from {points.shape[0]} anchors has condition number "
            f"{condition:.3e} above the bound {max_condition:.1e}")
    return AnchorSet(positions=points, A=A, Adag=scipy.linalg.pinv(A), condition=condition)


def make_anchors(model: FieldModel, geometry: ArrayGeometry, policy: str = "all",
                 max_condition=DEFAULT_MAX_CONDITION) -> AnchorSet:
    """
    Selects anchor points for coefficient transport. 'all' uses every
    magnetometer position; 'minimal' starts from ceil(kappa/3) spread-out
    sensors and adds sensors until A has full column rank.
    """
    logger = logging_setup()
    if geometry.anchors is not None:
        anchors = anchor_set_from_points(model, geometry.anchors, max_condition)
    elif policy == "all":
        anchors = anchor_set_from_points(model, geometry.positions, max_condition)
    elif policy == "minimal":
        order = _farthest_point_order(geometry.positions)
        size = ceil(model.kappa / 3)
        while True:
            points = geometry.positions[order[:size]]
            if np.linalg.matrix_rank(stacked_phi(model, points)) == model.kappa or size == len(order):
                break
            size += 1
        anchors = anchor_set_from_points(model, points, max_condition)
    else:
        raise ValueError(f"unknown anchor policy {policy!r}")
    logger.info(f"anchors: S={anchors.S}, A {anchors.A.shape}, cond(A)={anchors.condition:.2f}")
    return anchors


def _departing_points(anchors: AnchorSet, psi: PoseDelta):
    """ R_{bk}^{bk+1} and the anchor points expressed in b_k: r^{b_k} = R^T r^{b_k+1} + dp """
    R = rot_exp(psi.dphi).T
    return R, anchors.positions @ R + np.asarray(psi.dp, dtype=float)


def transport_matrix(model: FieldModel, anchors: AnchorSet, psi: PoseDelta):
    """ B(psi): rows R Phi(R^T r_s + dp), shape (3S, kappa) """
    R, points = _departing_points(anchors, psi)
    Phi = phi_stack(model, points)
    return np.einsum("ij,sjk->sik", R, Phi).reshape(-1, model.kappa)


def transport_theta(model: FieldModel, anchors: AnchorSet, psi: PoseDelta, theta):
    """ theta_k+1 = A^+ B(psi) theta_k """
    return anchors.Adag @ (transport_matrix(model, anchors, psi) @ np.asarray(theta, dtype=float))


def transport_jacobians(model: FieldModel, anchors: AnchorSet, psi: PoseDelta, theta):
    """
    Partials of B(psi) theta with respect to dp (J1) and dphi (J2), each (3S, 3).

    With r_s' = R^T r_s + dp, m_s = M(r_s') and G_s = dM/dr at r_s':
        J1_s = R G_s
        J2_s = ([R m_s]x - R G_s R^T [r_s]x) J_r(dphi)
    """
    R, points = _departing_points(anchors, psi)
    theta = np.asarray(theta, dtype=float)
    fields = phi_stack(model, points) @ theta                   # (S, 3)
    grads = field_jacobian_stack(model, theta, points)          # (S, 3, 3)
    Jr = right_jacobian(psi.dphi)
    J1 = np.einsum("ij,sjk->sik", R, grads)
    J2 = (skew_stack(fields @ R.T) - J1 @ R.T @ skew_stack(anchors.positions)) @ Jr
    return J1.reshape(-1, 3), J2.reshape(-1, 3)
