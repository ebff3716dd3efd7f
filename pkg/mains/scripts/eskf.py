"""
Error-state Kalman filter over the joint INS + field-coefficient state.

Nominal state: NavState (p, v, q, o_a, o_w) and theta (kappa).
Error state (15 + kappa), in this order:
    dp (0:3), dv (3:6), eps (6:9), do_a (9:12), do_w (12:15), dtheta (15:)
Process noise w = (w_a, w_w, w_oa, w_ow, w_theta), 12 + kappa.

Each epoch: propagate the nominal state (strapdown + coefficient transport)
and P with F/G, then correct with the magnetometer array (and with external
positions inside the aiding window), inject the error estimate and reset it.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
import xarray as xr
# custom fxs
from scripts import magmodel
from scripts.dataio import Dataset
from scripts.geom import error_quat, level_attitude, quat_mul, right_jacobian, rot_exp, skew
from scripts.magmodel import AnchorSet, ArrayGeometry, FieldModel, PoseDelta
from scripts.strapdown import ImuSample, NavState, corrected_inputs, pose_delta, propagate
from scripts.utils.config_tools import RunConfig
from scripts.utils.errors import (DegenerateGeometryError, FilterDivergenceError, MainsError,
                                  RejectedSampleError, SingularInnovationError)
from scripts.utils.logging_tools import log_memory_usage, logging_setup

IP, IV, IE, IOA, IOW = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)
N_INS = 15
WA, WW, WOA, WOW = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12)
N_W_INS = 12
PSD_TOLERANCE = 1e-9


# ----- TYPES ----------------------------------------------------------------#
@dataclass(frozen=True)
class FullState:
    ins: NavState
    theta: np.ndarray

    def is_finite(self):
        return self.ins.is_finite() and bool(np.all(np.isfinite(self.theta)))


@dataclass(frozen=True, eq=False)
class FilterSetup:
    """ everything a run shares between epochs, never mutated """
    model: FieldModel
    geometry: ArrayGeometry
    anchors: AnchorSet
    X: np.ndarray           # stacked Phi(r_mi), (3N, kappa)
    Xdag: np.ndarray
    cfg: RunConfig

    @property
    def kappa(self):
        return self.model.kappa

    @property
    def n_error(self):
        return N_INS + self.model.kappa

    @property
    def g(self):
        return self.cfg.g

    def measurement_matrix(self):
        """ H = [0_(3N x 15)  X] """
        H = np.zeros((self.X.shape[0], self.n_error))
        H[:, N_INS:] = self.X
        return H


def build_setup(cfg: RunConfig, geometry: ArrayGeometry, model: FieldModel = None) -> FilterSetup:
    """ field model, anchors and the measurement regressor for one run """
    model = model or magmodel.build_model(cfg.model.order)
    anchors = magmodel.make_anchors(model, geometry, cfg.model.anchors, cfg.model.max_condition)
    X = magmodel.stacked_phi(model, geometry.positions)
    return FilterSetup(model=model, geometry=geometry, anchors=anchors,
                       X=X, Xdag=scipy.linalg.pinv(X), cfg=cfg)


def inject(state: FullState, dx) -> FullState:
    """ x = x_hat (+) dx: additive except the attitude, q = q_hat (x) [1, eps/2] """
    dx = np.asarray(dx, dtype=float)
    ins = replace(state.ins,
                  p=state.ins.p + dx[IP],
                  v=state.ins.v + dx[IV],
                  q=quat_mul(state.ins.q, error_quat(dx[IE])),
                  oa=state.ins.oa + dx[IOA],
                  ow=state.ins.ow + dx[IOW])
    return FullState(ins=ins, theta=state.theta + dx[N_INS:])


def symmetrize(P):
    return 0.5 * (P + P.T)


# ----- PREDICTION -----------------------------------------------------------#
def error_jacobians(state: FullState, u: ImuSample, Ts: float, setup: FilterSetup,
                    psi: PoseDelta = None, form: str = None):
    """
    F (n x n) and G (n x (12 + kappa)) of the error dynamics.

    form 'compact' keeps the first-order terms in Ts and uses J_r ~ I for the
    gyro-bias coupling into the attitude. 'full' is the complete linearization
    of the discrete nominal map, including the Ts^2 specific-force terms.
    """
    form = form or setup.cfg.filter.jacobians
    full = form == "full"
    x = state.ins
    R = x.R
    s, w = corrected_inputs(x, u)
    dphi = w * Ts
    psi = psi if psi is not None else pose_delta(x, u, Ts, setup.g)
    kappa = setup.kappa
    n = N_INS + kappa
    I3 = np.eye(3)
    Jr = right_jacobian(dphi) if full else I3

    F = np.eye(n)
    F[IP, IV] = I3 * Ts
    F[IV, IE] = -R @ skew(s) * Ts
    F[IV, IOA] = -R * Ts
    F[IE, IE] = rot_exp(dphi).T
    F[IE, IOW] = -Jr * Ts
    if full:
        F[IP, IE] = -R @ skew(s) * Ts ** 2 / 2.0
        F[IP, IOA] = -R * Ts ** 2 / 2.0

    G = np.zeros((n, N_W_INS + kappa))
    G[IV, WA] = -R * Ts
    G[IE, WW] = -Jr * Ts
    G[IOA, WOA] = I3 * np.sqrt(Ts)
    G[IOW, WOW] = I3 * np.sqrt(Ts)
    G[N_INS:, N_W_INS:] = np.eye(kappa)
    if full:
        G[IP, WA] = -R * Ts ** 2 / 2.0

    if setup.cfg.filter.use_mag:
        # d(dp_body) = R^T Ts dv + [eta]x eps - Ts^2/2 do_a,  d(dphi) = -Ts do_w
        Adag = setup.anchors.Adag
        B = magmodel.transport_matrix(setup.model, setup.anchors, psi)
        J1, J2 = magmodel.transport_jacobians(setup.model, setup.anchors, psi, state.theta)
        AJ1, AJ2 = Adag @ J1, Adag @ J2
        eta = R.T @ (x.v * Ts + setup.g * Ts ** 2 / 2.0)
        F[N_INS:, N_INS:] = Adag @ B
        F[N_INS:, IV] = AJ1 @ R.T * Ts
        F[N_INS:, IE] = AJ1 @ skew(eta)
        F[N_INS:, IOW] = -AJ2 * Ts
        G[N_INS:, WW] = -AJ2 * Ts
        if full:
            F[N_INS:, IOA] = -AJ1 * Ts ** 2 / 2.0
            G[N_INS:, WA] = -AJ1 * Ts ** 2 / 2.0
    return F, G


def nominal_step(state: FullState, u: ImuSample, Ts: float, setup: FilterSetup) -> FullState:
    """ x_k+1 = f(x_k, u_k, 0) """
    psi = pose_delta(state.ins, u, Ts, setup.g)
    theta = state.theta
    if setup.cfg.filter.use_mag:
        theta = magmodel.transport_theta(setup.model, setup.anchors, psi, theta)
    return FullState(ins=propagate(state.ins, u, Ts, setup.g), theta=theta)


def predict(state: FullState, P, u: ImuSample, Ts: float, setup: FilterSetup):
    """ nominal propagation and P' = F P F^T + G Q G^T """
    if not Ts > 0:
        raise MainsError(f"sampling interval must be positive, got Ts={Ts}")
    psi = pose_delta(state.ins, u, Ts, setup.g)
    F, G = error_jacobians(state, u, Ts, setup, psi)
    new_state = nominal_step(state, u, Ts, setup)
    Q = setup.cfg.noise.process_covariance(Ts, setup.kappa)
    P_new = symmetrize(F @ P @ F.T + G @ Q @ G.T)
    if not (np.all(np.isfinite(P_new)) and new_state.is_finite()):
        logger = logging_setup()
        logger.error(f"non-finite prediction: trace(P) before={np.trace(P):.3e}, Ts={Ts:.4g}, "
                     f"s={np.round(u.s, 4)}, w={np.round(u.w, 4)}, |theta|={np.linalg.norm(state.theta):.3e}")
        raise FilterDivergenceError("covariance or nominal state became non-finite during prediction")
    return new_state, P_new


def check_psd(P, tolerance=PSD_TOLERANCE):
    """ raises FilterDivergenceError when P has an eigenvalue below -tolerance * trace(P) """
    eig_min = float(np.linalg.eigvalsh(P)[0])
    if eig_min < -tolerance * np.trace(P):
        raise FilterDivergenceError(
            f"covariance lost positive semidefiniteness: min eigenvalue {eig_min:.3e}, "
            f"trace {np.trace(P):.3e}")
    return eig_min


# ----- UPDATES --------------------------------------------------------------#
def adapt_R(model: FieldModel, geometry: ArrayGeometry, y, sigma_floor=magmodel.SIGMA_MIN,
            regressor=None):
    """
    R_k = max(sigma2_hat, sigma_floor^2) I_3N, sigma2_hat being the residual of
    a least-squares fit of the field model to the snapshot. Passing
    regressor=(X, X^+) skips rebuilding and checking X every epoch.
    """
    y = np.asarray(y, dtype=float).ravel()
    if regressor is None:
        _, sigma2 = magmodel.fit_theta(model, geometry.positions, y)
    else:
        sigma2 = magmodel.residual_variance(*regressor, y)
    return max(sigma2, sigma_floor ** 2) * np.eye(y.shape[0])


def kalman_correct(state: FullState, P, z, H, R, joseph: bool = False):
    """
    dx = K z with K = P H^T S^-1, S = H P H^T + R; injects dx and returns
    (state', P', nis). P' uses the standard form unless joseph is set.
    """
    PHt = P @ H.T
    S = symmetrize(H @ PHt + R)
    try:
        factor = scipy.linalg.cho_factor(S)
    except scipy.linalg.LinAlgError as e:
        raise SingularInnovationError(
            f"innovation covariance ({S.shape[0]}x{S.shape[0]}) is not positive definite") from e
    K = scipy.linalg.cho_solve(factor, PHt.T).T
    if joseph:
        IKH = np.eye(P.shape[0]) - K @ H
        P_new = IKH @ P @ IKH.T + K @ R @ K.T
    else:
        P_new = P - K @ PHt.T
    nis = float(z @ scipy.linalg.cho_solve(factor, z))
    return inject(state, K @ z), symmetrize(P_new), nis


def gate_triples(z, S, gate_sigma: float):
    """ row indices of the magnetometer triples with Mahalanobis distance <= gate_sigma """
    keep = []
    for i in range(z.shape[0] // 3):
        rows = slice(3 * i, 3 * i + 3)
        d2 = z[rows] @ np.linalg.solve(S[rows, rows], z[rows])
        if np.sqrt(d2) <= gate_sigma:
            keep.extend(range(3 * i, 3 * i + 3))
    return np.asarray(keep, dtype=int)


def update(state: FullState, P, y, setup: FilterSetup, diagnostics: dict = None):
    """
    Magnetometer-array correction with innovation z = y - X theta_hat. Only the
    theta block of H is nonzero. When given, diagnostics receives
    nis, dof, sigma2 and the number of gated magnetometers.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != setup.X.shape[0]:
        raise MainsError(f"measurement has {y.shape[0]} values, geometry expects {setup.X.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise RejectedSampleError(
            f"magnetometer snapshot holds {np.count_nonzero(~np.isfinite(y))} non-finite values")
    noise = setup.cfg.noise
    if noise.adaptive_r:
        R = adapt_R(setup.model, setup.geometry, y, noise.sigma_floor, (setup.X, setup.Xdag))
    else:
        R = noise.mag_std ** 2 * np.eye(y.shape[0])

    H = setup.measurement_matrix()
    z = y - setup.X @ state.theta
    gated = 0
    if noise.gate_sigma is not None:
        S = setup.X @ P[N_INS:, N_INS:] @ setup.X.T + R
        keep = gate_triples(z, S, noise.gate_sigma)
        gated = (y.shape[0] - keep.size) // 3
        if keep.size == 0:
            if diagnostics is not None:
                diagnostics.update(nis=np.nan, dof=0, sigma2=float(R[0, 0]), gated=gated)
            return state, P
        z, H, R = z[keep], H[keep], R[np.ix_(keep, keep)]

    new_state, P_new, nis = kalman_correct(state, P, z, H, R, setup.cfg.filter.joseph)
    if diagnostics is not None:
        diagnostics.update(nis=nis, dof=int(z.shape[0]), sigma2=float(R[0, 0]), gated=gated)
    return new_state, P_new


def position_update(state: FullState, P, p_meas, sigma_p: float):
    """ linear update with H selecting dp and R = sigma_p^2 I """
    p_meas = np.asarray(p_meas, dtype=float)
    if not np.all(np.isfinite(p_meas)):
        raise RejectedSampleError("position measurement holds non-finite values")
    H = np.zeros((3, P.shape[0]))
    H[:, IP] = np.eye(3)
    new_state, P_new, _ = kalman_correct(state, P, p_meas - state.ins.p, H,
                                         sigma_p ** 2 * np.eye(3))
    return new_state, P_new


# ----- RUNS -----------------------------------------------------------------#
def initial_state(dataset: Dataset, setup: FilterSetup, mag_rows=None) -> FullState:
    """
    Navigation part from the first ground-truth pose, or p = v = 0 with a
    level attitude from the first accelerometer sample. theta is fitted to the
    first complete magnetometer snapshot (zero when there is none).
    """
    logger = logging_setup()
    t, S, _ = dataset.imu_arrays()
    if dataset.has_truth():
        truth = dataset.truth_at(t[:1])
        ins = NavState(p=truth["p"][0], v=truth["v"][0], q=truth["q"][0])
        logger.info(f"initial pose from ground truth at t={t[0]:.3f} s")
    else:
        ins = NavState(q=level_attitude(S[0]))
        logger.info("no ground truth: initial pose at the origin, level attitude, yaw 0")

    theta = np.zeros(setup.kappa)
    mag_rows = dataset.aligned_mag(setup.cfg.alignment_tolerance) if mag_rows is None else mag_rows
    complete = np.flatnonzero(np.isfinite(mag_rows).all(axis=1))
    if complete.size:
        try:
            theta, sigma2 = magmodel.fit_theta(setup.model, setup.geometry.positions,
                                               mag_rows[complete[0]])
            logger.info(f"initial theta fitted at epoch {complete[0]}, sigma2={sigma2:.3e} uT^2")
        except DegenerateGeometryError as e:
            logger.warning(f"initial theta left at zero: {e}")
    return FullState(ins=ins, theta=theta)


def _trajectory_dataset(times, records, setup: FilterSetup, full_P):
    """ packs the per-epoch records into the xarray layout of a filter run """
    data = {
        "p": (("time", "axis"), records["p"]),
        "v": (("time", "axis"), records["v"]),
        "q": (("time", "quat"), records["q"]),
        "oa": (("time", "axis"), records["oa"]),
        "ow": (("time", "axis"), records["ow"]),
        "theta": (("time", "coef"), records["theta"]),
        "P_diag": (("time", "state"), records["P_diag"]),
        "P_pos": (("time", "axis", "axis_t"), records["P_pos"]),
        "nis": ("time", records["nis"]),
        "nis_dof": ("time", records["nis_dof"]),
        "sigma2": ("time", records["sigma2"]),
    }
    if full_P is not None:
        data["P"] = (("time", "state", "state_t"), full_P)
    cfg = setup.cfg
    return xr.Dataset(
        data,
        coords={"time": times, "axis": list("xyz"), "axis_t": list("xyz"),
                "quat": list("wxyz"), "coef": np.arange(setup.kappa),
                "state": np.arange(setup.n_error), "state_t": np.arange(setup.n_error)},
        attrs={"order": setup.model.order, "kappa": setup.kappa,
               "n_sensors": setup.geometry.n_sensors, "geometry": setup.geometry.name,
               "anchors": setup.anchors.S, "use_mag": int(cfg.filter.use_mag),
               "aiding_seconds": cfg.filter.aiding_seconds, "jacobians": cfg.filter.jacobians})


def run_filter(dataset: Dataset, geometry: ArrayGeometry = None, cfg: RunConfig = None,
               full_covariance: bool = False) -> xr.Dataset:
    """
    Runs the filter over a whole dataset: at every epoch after the first,
    predict with the previous IMU sample, then correct with the magnetometer
    snapshot and, inside the aiding window, with the ground-truth position.

    returns:
        xr.Dataset over 'time' with p, v, q, oa, ow, theta, P_diag, P_pos,
        nis/nis_dof/sigma2 of the magnetometer updates (NaN when none) and,
        with full_covariance, the whole P per epoch.
    """
    logger = logging_setup()
    cfg = cfg or RunConfig()
    geometry = geometry or dataset.geometry
    if geometry.n_sensors != dataset.n_sensors:
        raise MainsError(f"geometry has {geometry.n_sensors} magnetometers, "
                         f"dataset has {dataset.n_sensors}")
    setup = build_setup(cfg, geometry)
    t, S, W = dataset.imu_arrays()
    n = t.shape[0]
    if n < 2:
        raise MainsError(f"dataset holds {n} IMU sample(s), at least 2 are needed")
    Y, snapshot = dataset.mag_association(cfg.alignment_tolerance)
    aiding = dataset.has_truth() and cfg.filter.aiding_seconds > 0
    p_truth = dataset.truth_at(t)["p"] if aiding else None
    logger.info(f"filter run: {n} epochs over {t[-1] - t[0]:.1f} s, order {setup.model.order} "
                f"(kappa={setup.kappa}), N={geometry.n_sensors}, use_mag={cfg.filter.use_mag}, "
                f"aiding={cfg.filter.aiding_seconds if aiding else 0:.0f} s")

    state = initial_state(dataset, setup, Y)
    P = cfg.init.covariance(setup.kappa)
    records = {
        "p": np.empty((n, 3)), "v": np.empty((n, 3)), "q": np.empty((n, 4)),
        "oa": np.empty((n, 3)), "ow": np.empty((n, 3)),
        "theta": np.empty((n, setup.kappa)), "P_diag": np.empty((n, setup.n_error)),
        "P_pos": np.empty((n, 3, 3)),
        "nis": np.full(n, np.nan), "nis_dof": np.zeros(n, dtype=int), "sigma2": np.full(n, np.nan),
    }
    full_P = np.empty((n, setup.n_error, setup.n_error)) if full_covariance else None
    rejected = 0

    def record(k):
        ins = state.ins
        records["p"][k], records["v"][k], records["q"][k] = ins.p, ins.v, ins.q
        records["oa"][k], records["ow"][k] = ins.oa, ins.ow
        records["theta"][k] = state.theta
        records["P_diag"][k] = np.diag(P)
        records["P_pos"][k] = P[IP, IP]
        if full_P is not None:
            full_P[k] = P

    record(0)
    for k in range(1, n):
        try:
            u = ImuSample(s=S[k - 1], w=W[k - 1], t=t[k - 1])
            state, P = predict(state, P, u, t[k] - t[k - 1], setup)

            if cfg.filter.use_mag and snapshot[k]:
                diagnostics = {}
                try:
                    state, P = update(state, P, Y[k], setup, diagnostics)
                    records["nis"][k] = diagnostics["nis"]
                    records["nis_dof"][k] = diagnostics["dof"]
                    records["sigma2"][k] = diagnostics["sigma2"]
                except RejectedSampleError as e:
                    rejected += 1
                    logger.warning(f"epoch {k} (t={t[k]:.3f} s): {e}; prediction only")

            if aiding and t[k] - t[0] < cfg.filter.aiding_seconds:
                state, P = position_update(state, P, p_truth[k], cfg.noise.position_std)
            elif aiding:
                aiding = False
                logger.info(f"aiding window ended at epoch {k} (t={t[k]:.3f} s), free navigation from here: "
                            f"trace(P_pos)={np.trace(P[IP, IP]):.3e}")

            if cfg.filter.psd_check_every and k % cfg.filter.psd_check_every == 0:
                check_psd(P)
        except MainsError as err:
            logger.error(f"filter stopped at epoch {k} of {n}: {err.message}")
            raise err.at_epoch(k, float(t[k]))
        record(k)

        if cfg.filter.progress_every and k % cfg.filter.progress_every == 0:
            logger.info(f"epoch {k}/{n}: t={t[k] - t[0]:.1f} s, p={np.round(state.ins.p, 3)}, "
                        f"trace(P_pos)={np.trace(P[IP, IP]):.3e}")

    if rejected:
        logger.warning(f"{rejected} magnetometer snapshot(s) rejected for non-finite values")
    log_memory_usage("end of filter run")
    traj = _trajectory_dataset(t, records, setup, full_P)
    traj.attrs["rejected"] = rejected
    traj.attrs["dataset"] = str(dataset.meta.get("name", ""))
    return traj
