"""
Here are functions that build synthetic magnetic worlds, scripted walking
trajectories and noisy IMU/magnetometer-array recordings of them, written
in the same dataset schema as real recordings.

Frames: ENU navigation frame (z up, floor at z = 0), body frame of the array
board. Field values in uT, positions in m, dipole moments in A m^2.
"""

from dataclasses import dataclass, replace
from math import ceil, floor

import numpy as np
import pandas as pd
import xarray as xr
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
from scipy.spatial.transform import Rotation
# custom fxs
from scripts.dataio import IMU_COLUMNS, TRUTH_COLUMNS, VELOCITY_COLUMNS, Dataset, load_geometry, mag_columns
from scripts.magmodel import ArrayGeometry
from scripts.strapdown import GRAVITY
from scripts.utils.config_tools import (ScenarioConfig, SensorConfig, TrajectoryConfig, WorldConfig,
                                        geometry_path, scenario_to_dict)
from scripts.utils.errors import ConfigError, KeepOutError, ScriptError
from scripts.utils.logging_tools import logging_setup

MU0_OVER_4PI_UT = 0.1        # mu0 / 4 pi in uT m^3 / (A m^2)
PATH_SPACING = 0.05          # m, knot spacing of the path spline
MAX_PLACEMENT_TRIES = 1000


# ----- WORLD ----------------------------------------------------------------#
@dataclass(frozen=True, eq=False)
class DipoleWorld:
    positions: np.ndarray           # (D, 3) m, below the floor
    moments: np.ndarray             # (D, 3) A m^2
    background: np.ndarray          # (3,) uT
    gradient: np.ndarray = None     # (3, 3) uT/m, symmetric traceless, about the origin
    keepout: float = 0.5            # m

    @property
    def n_dipoles(self):
        return self.positions.shape[0]


def _dipole_field(world: DipoleWorld, points):
    """ field without keep-out checks, points (n, 3) -> (n, 3) """
    out = np.tile(np.asarray(world.background, dtype=float), (points.shape[0], 1))
    if world.gradient is not None:
        out += points @ np.asarray(world.gradient).T
    if world.n_dipoles:
        d = points[:, None, :] - world.positions[None, :, :]
        dist = np.linalg.norm(d, axis=2)
        rhat = d / dist[..., None]
        m_dot_r = np.einsum("ndk,dk->nd", rhat, world.moments)
        contrib = (3.0 * rhat * m_dot_r[..., None] - world.moments[None, :, :]) / dist[..., None] ** 3
        out += MU0_OVER_4PI_UT * contrib.sum(axis=1)
    return out


def world_field(world: DipoleWorld, r):
    """
    background + gradient (r) + sum of point-dipole fields at r, for a single
    3-vector or an (n, 3) array of points. Raises KeepOutError inside the
    keep-out radius of any dipole.
    """
    r = np.asarray(r, dtype=float)
    points = np.atleast_2d(r)
    if world.n_dipoles:
        dist = np.linalg.norm(points[:, None, :] - world.positions[None, :, :], axis=2)
        inside = np.argwhere(dist < world.keepout)
        if inside.size:
            i, d = inside[0]
            raise KeepOutError(
                f"field requested at {np.round(points[i], 3)}, {dist[i, d]:.3f} m from dipole {d} "
                f"at {np.round(world.positions[d], 3)} (keep-out radius {world.keepout} m)")
    out = _dipole_field(world, points)
    return out[0] if r.ndim == 1 else out


def _validate_gradient(gradient):
    if gradient is None:
        return None
    G = np.asarray(gradient, dtype=float)
    if G.shape != (3, 3):
        raise ConfigError(f"world.gradient must be 3x3, got shape {G.shape}")
    if not np.allclose(G, G.T, atol=1e-9) or abs(np.trace(G)) > 1e-9:
        raise ConfigError("world.gradient must be symmetric and traceless to stay curl- and divergence-free")
    return G


def calibrate(world: DipoleWorld, points, target: float) -> DipoleWorld:
    """ scales the dipole moments so |B| varies by target uT peak-to-peak over points """
    logger = logging_setup()

    def excess(scale):
        field = _dipole_field(replace(world, moments=world.moments * scale), points)
        return np.ptp(np.linalg.norm(field, axis=1)) - target

    if excess(0.0) >= 0:
        logger.warning(f"background alone varies by more than {target} uT, dipoles switched off")
        return replace(world, moments=np.zeros_like(world.moments))
    hi = 1.0
    for _ in range(40):
        if excess(hi) > 0:
            break
        hi *= 4.0
    else:
        raise ConfigError(f"could not reach a field variation of {target} uT with {world.n_dipoles} dipoles")
    scale = brentq(excess, 0.0, hi, xtol=1e-9 * hi)
    logger.info(f"dipole moments scaled by {scale:.3f} for a {target} uT magnitude variation")
    return replace(world, moments=world.moments * scale)


def make_world(cfg: WorldConfig, script: "TrajectoryScript", geometry: ArrayGeometry,
               seed: int = 0) -> DipoleWorld:
    """
    Seeds cfg.n_dipoles random dipoles below the floor under the trajectory
    footprint (+ margin), at least keepout + array radius away from the path,
    then calibrates their strength to cfg.target_variation.
    """
    logger = logging_setup()
    rng = np.random.default_rng([seed, 0])
    path = script.sample_path()
    clearance = cfg.keepout + float(np.max(np.linalg.norm(geometry.positions, axis=1)))
    lo = path[:, :2].min(axis=0) - cfg.margin
    hi = path[:, :2].max(axis=0) + cfg.margin
    depth_min, depth_max = cfg.depth

    positions = []
    tries = 0
    while len(positions) < cfg.n_dipoles:
        tries += 1
        if tries > MAX_PLACEMENT_TRIES * max(cfg.n_dipoles, 1):
            raise ConfigError(
                f"placed only {len(positions)} of {cfg.n_dipoles} dipoles outside the "
                f"{clearance:.2f} m clearance; widen world.margin or world.depth")
        candidate = np.concatenate([rng.uniform(lo, hi), [-rng.uniform(depth_min, depth_max)]])
        if np.min(np.linalg.norm(path - candidate, axis=1)) > clearance:
            positions.append(candidate)
    moments = rng.standard_normal((cfg.n_dipoles, 3))
    moments /= np.linalg.norm(moments, axis=1, keepdims=True)

    world = DipoleWorld(positions=np.asarray(positions, dtype=float).reshape(-1, 3),
                        moments=moments.reshape(-1, 3),
                        background=np.asarray(cfg.background, dtype=float),
                        gradient=_validate_gradient(cfg.gradient),
                        keepout=cfg.keepout)
    if cfg.target_variation is not None and world.n_dipoles:
        world = calibrate(world, path, cfg.target_variation)
    logger.info(f"world: {world.n_dipoles} dipoles, background {np.round(world.background, 2)} uT, "
                f"gradient={'yes' if world.gradient is not None else 'no'}")
    return world


def field_magnitude_map(world: DipoleWorld, extent, height: float, resolution: float = 0.05):
    """ |B| on a horizontal grid at the given height; NaN inside keep-out radii """
    xmin, xmax, ymin, ymax = extent
    x = np.arange(xmin, xmax + resolution / 2, resolution)
    y = np.arange(ymin, ymax + resolution / 2, resolution)
    X, Y = np.meshgrid(x, y)
    points = np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, height)])
    magnitude = np.linalg.norm(_dipole_field(world, points), axis=1)
    if world.n_dipoles:
        dist = np.linalg.norm(points[:, None, :] - world.positions[None, :, :], axis=2)
        magnitude[(dist < world.keepout).any(axis=1)] = np.nan
    return xr.DataArray(magnitude.reshape(X.shape), dims=("y", "x"), coords={"y": y, "x": x},
                        name="field_magnitude", attrs={"units": "uT", "height": height})


# ----- TRAJECTORIES ---------------------------------------------------------#
def _smoothstep(tau):
    """ quintic ramp h, its integral H and derivative h' on [0, 1] """
    tau = np.clip(tau, 0.0, 1.0)
    h = tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau ** 2)
    H = tau ** 4 * (2.5 - 3.0 * tau + tau ** 2)
    dh = 30.0 * tau ** 2 * (1.0 - tau) ** 2
    return h, H, dh


def _rounded_loop(vertices, cut: float, spacing: float = PATH_SPACING):
    """
    Dense samples of a closed polygon whose corners are replaced by quadratic
    Bezier arcs starting/ending cut metres from each vertex. Starts at the
    midpoint of the first edge.
    """
    V = np.asarray(vertices, dtype=float)
    n = V.shape[0]
    points = []
    for i in range(n):
        a, b, c = V[i], V[(i + 1) % n], V[(i + 2) % n]
        d_in = (b - a) / np.linalg.norm(b - a)
        d_out = (c - b) / np.linalg.norm(c - b)
        start, arc_in, arc_out = (a + b) / 2.0, b - d_in * cut, b + d_out * cut
        m = max(int(ceil(np.linalg.norm(arc_in - start) / spacing)), 1)
        points.extend(start + (arc_in - start) * u for u in np.arange(m) / m)
        m = max(int(ceil(2.0 * cut / spacing)), 2)
        points.extend((1 - u) ** 2 * arc_in + 2 * u * (1 - u) * b + u ** 2 * arc_out
                      for u in np.arange(m) / m)
        end = (b + c) / 2.0
        m = max(int(ceil(np.linalg.norm(end - arc_out) / spacing)), 1)
        points.extend(arc_out + (end - arc_out) * u for u in np.arange(m) / m)
    return np.asarray(points)


@dataclass(frozen=True, eq=False)
class TrajectoryScript:
    """
    A walking script: rest, smooth ramp to cruise speed, laps around a closed
    C2 path at constant height and board tilt, ramp down, final rest.
    """
    config: TrajectoryConfig
    path: CubicSpline = None        # xy as a periodic function of arc length
    loop_length: float = 0.0

    @property
    def static(self):
        return self.config.kind == "static"

    @property
    def distance(self):
        return 0.0 if self.static else self.config.laps * self.loop_length

    @property
    def cruise_seconds(self):
        c = self.config
        return 0.0 if self.static else (self.distance - c.speed * c.ramp_seconds) / c.speed

    @property
    def duration(self):
        c = self.config
        if self.static:
            return c.rest_seconds
        return c.rest_seconds + 2.0 * c.ramp_seconds + self.cruise_seconds + c.final_rest_seconds

    def arc_length(self, t):
        """ (s, ds/dt, d2s/dt2) along the path at times t """
        c = self.config
        t = np.asarray(t, dtype=float)
        s, sd, sdd = np.zeros_like(t), np.zeros_like(t), np.zeros_like(t)
        if self.static:
            return s, sd, sdd
        v, Tr, Tc = c.speed, c.ramp_seconds, self.cruise_seconds
        t_up = c.rest_seconds
        t_cruise, t_down, t_stop = t_up + Tr, t_up + Tr + Tc, t_up + 2 * Tr + Tc

        up = (t >= t_up) & (t < t_cruise)
        h, H, dh = _smoothstep((t[up] - t_up) / Tr)
        s[up], sd[up], sdd[up] = v * Tr * H, v * h, v / Tr * dh

        cruise = (t >= t_cruise) & (t < t_down)
        s[cruise], sd[cruise] = v * Tr / 2.0 + v * (t[cruise] - t_cruise), v

        down = (t >= t_down) & (t < t_stop)
        h, H, dh = _smoothstep(1.0 - (t[down] - t_down) / Tr)
        s[down] = v * Tr / 2.0 + v * Tc + v * Tr * (0.5 - H)
        sd[down], sdd[down] = v * h, -v / Tr * dh

        s[t >= t_stop] = self.distance
        return s, sd, sdd

    def kinematics(self, t):
        """ p, v, a (n, 3) and the attitude (scipy Rotation, body -> nav) at times t """
        c = self.config
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n = t.shape[0]
        if self.static:
            p = np.tile([0.0, 0.0, c.height], (n, 1))
            yaw = np.zeros(n)
            vel, acc = np.zeros((n, 3)), np.zeros((n, 3))
        else:
            s, sd, sdd = self.arc_length(t)
            u = np.mod(s, self.loop_length)
            xy, dxy, ddxy = self.path(u), self.path(u, 1), self.path(u, 2)
            p = np.column_stack([xy, np.full(n, c.height)])
            vel = np.column_stack([dxy * sd[:, None], np.zeros(n)])
            acc = np.column_stack([ddxy * sd[:, None] ** 2 + dxy * sdd[:, None], np.zeros(n)])
            yaw = np.arctan2(dxy[:, 1], dxy[:, 0])
        rot = Rotation.from_euler("ZX", np.column_stack([yaw, np.full(n, c.tilt)]))
        return {"p": p, "v": vel, "a": acc, "rot": rot}

    def sample_path(self, spacing: float = 0.1):
        """ board-centre points along one loop at the walking height, (m, 3) """
        c = self.config
        if self.static:
            return np.array([[0.0, 0.0, c.height]])
        u = np.arange(0.0, self.loop_length, spacing)
        return np.column_stack([self.path(u), np.full(u.shape[0], c.height)])


def build_script(cfg: TrajectoryConfig) -> TrajectoryScript:
    """ validates a trajectory configuration and builds its C2 path; raises ScriptError """
    if cfg.kind not in ("square", "waypoints", "static"):
        raise ScriptError(f"unknown trajectory kind {cfg.kind!r}")
    if cfg.height <= 0:
        raise ScriptError(f"trajectory height must be positive, got {cfg.height}")
    if cfg.rest_seconds < 0 or cfg.final_rest_seconds < 0:
        raise ScriptError("rest durations must be non-negative")
    if cfg.kind == "static":
        if cfg.rest_seconds <= 0:
            raise ScriptError("a static script needs rest_seconds > 0")
        return TrajectoryScript(config=cfg)

    if cfg.speed <= 0 or cfg.laps <= 0:
        raise ScriptError(f"speed and laps must be positive, got speed={cfg.speed}, laps={cfg.laps}")
    if cfg.ramp_seconds <= 0:
        raise ScriptError("ramp_seconds must be positive, an instant speed change is not smooth")
    if cfg.kind == "square":
        if cfg.side <= 0:
            raise ScriptError(f"square side must be positive, got {cfg.side}")
        h = cfg.side / 2.0
        vertices = [(-h, -h), (h, -h), (h, h), (-h, h)]
    else:
        vertices = np.asarray(cfg.waypoints if cfg.waypoints is not None else [], dtype=float)
        if vertices.ndim != 2 or vertices.shape[0] < 3 or vertices.shape[1] != 2:
            raise ScriptError("a waypoint script needs at least 3 [x, y] waypoints")
    vertices = np.asarray(vertices, dtype=float)
    edges = np.linalg.norm(np.roll(vertices, -1, axis=0) - vertices, axis=1)
    if cfg.corner_radius <= 0:
        raise ScriptError("corner_radius must be positive, sharp corners are not smooth")
    if cfg.corner_radius >= edges.min() / 2.0:
        raise ScriptError(
            f"corner_radius {cfg.corner_radius} m does not fit on the shortest edge ({edges.min():.3f} m)")

    points = _rounded_loop(vertices, cfg.corner_radius)
    closed = np.vstack([points, points[:1]])
    knots = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(closed, axis=0), axis=1))])
    path = CubicSpline(knots, closed, bc_type="periodic")
    script = TrajectoryScript(config=cfg, path=path, loop_length=float(knots[-1]))
    if script.cruise_seconds < 0:
        raise ScriptError(f"{cfg.laps} lap(s) of {script.loop_length:.2f} m are shorter than the speed ramps")
    return script


# ----- SENSORS --------------------------------------------------------------#
def _continuous_quats(rot: Rotation):
    """ scalar-first quaternions without sign flips between neighbours """
    q = np.roll(rot.as_quat(), 1, axis=1)
    if q[0, 0] < 0:
        q[0] = -q[0]
    dots = np.einsum("ij,ij->i", q[1:], q[:-1])
    signs = np.concatenate([[1.0], np.cumprod(np.where(dots < 0, -1.0, 1.0))])
    return q * signs[:, None]


def _bias_series(rng, bias, rw, n, Ts):
    """ initial bias plus a random walk of density rw, (n, 3) """
    steps = rng.standard_normal((n, 3)) * rw * np.sqrt(Ts)
    walk = np.cumsum(steps, axis=0) - steps[0]
    return np.asarray(bias, dtype=float) + walk


def synthesize(world: DipoleWorld, script: TrajectoryScript, geometry: ArrayGeometry,
               sensors: SensorConfig, seed: int = 0, gravity=GRAVITY, name: str = "synthetic") -> Dataset:
    """
    Records the scripted trajectory with an IMU and the magnetometer array.

    IMU samples are interval averages over [t_k, t_k+1]:
        s_k = R_k^T ((v_k+1 - v_k) / Ts - g),  w_k = log(R_k^T R_k+1) / Ts
    plus bias (constant + random walk) and white noise (density / sqrt(Ts)).
    Magnetometer i reads R^T B(p + R r_i) + noise.
    """
    logger = logging_setup()
    rng = np.random.default_rng([seed, 1])
    g = np.asarray(gravity, dtype=float)
    Ts = 1.0 / sensors.imu_rate
    n = int(floor(script.duration * sensors.imu_rate + 1e-9)) + 1
    t = np.arange(n) * Ts

    kin = script.kinematics(np.append(t, t[-1] + Ts))
    rot = kin["rot"]
    R = rot.as_matrix()
    acc_mean = np.diff(kin["v"], axis=0) / Ts
    specific_force = np.einsum("kji,kj->ki", R[:-1], acc_mean - g)
    rates = (rot[:-1].inv() * rot[1:]).as_rotvec() / Ts

    accel_bias = _bias_series(rng, sensors.accel_bias, sensors.accel_bias_rw, n, Ts)
    gyro_bias = _bias_series(rng, sensors.gyro_bias, sensors.gyro_bias_rw, n, Ts)
    specific_force = specific_force + accel_bias + rng.standard_normal((n, 3)) * sensors.accel_density / np.sqrt(Ts)
    rates = rates + gyro_bias + rng.standard_normal((n, 3)) * sensors.gyro_density / np.sqrt(Ts)

    if sensors.mag_rate == sensors.imu_rate:
        t_mag = t
    else:
        t_mag = np.arange(0.0, t[-1] + 1e-9, 1.0 / sensors.mag_rate)
    kin_mag = script.kinematics(t_mag)
    R_mag = kin_mag["rot"].as_matrix()
    sensor_points = kin_mag["p"][:, None, :] + np.einsum("kij,nj->kni", R_mag, geometry.positions)
    B = world_field(world, sensor_points.reshape(-1, 3)).reshape(sensor_points.shape)
    readings = np.einsum("kji,knj->kni", R_mag, B).reshape(t_mag.shape[0], -1)
    readings = readings + rng.standard_normal(readings.shape) * sensors.mag_std

    kin_truth = script.kinematics(t)
    imu = pd.DataFrame(np.column_stack([t, specific_force, rates]), columns=IMU_COLUMNS)
    mag = pd.DataFrame(np.column_stack([t_mag, readings]), columns=mag_columns(geometry.n_sensors))
    truth = pd.DataFrame(np.column_stack([t, kin_truth["p"], _continuous_quats(kin_truth["rot"]),
                                          kin_truth["v"]]),
                         columns=TRUTH_COLUMNS + VELOCITY_COLUMNS)
    meta = {
        "name": name,
        "source": "synthetic",
        "seed": int(seed),
        "rates": {"imu": float(sensors.imu_rate), "mag": float(sensors.mag_rate)},
        "trajectory": {"kind": script.config.kind, "duration": float(script.duration),
                       "distance": float(script.distance), "height": float(script.config.height),
                       "tilt": float(script.config.tilt)},
        "world": {"n_dipoles": int(world.n_dipoles), "background": [float(b) for b in world.background]},
    }
    logger.info(f"synthesized {name}: {n} IMU samples over {t[-1]:.1f} s, {t_mag.shape[0]} array "
                f"snapshots from {geometry.n_sensors} magnetometers, {script.distance:.1f} m walked")
    return Dataset(imu=imu, mag=mag, geometry=geometry, truth=truth, meta=meta)


def simulate_scenario(cfg: ScenarioConfig, seed: int = None) -> Dataset:
    """ geometry, script, world and recording of one scenario configuration """
    seed = cfg.seed if seed is None else seed
    geometry = load_geometry(geometry_path(cfg.geometry))
    script = build_script(cfg.trajectory)
    world = make_world(cfg.world, script, geometry, seed)
    dataset = synthesize(world, script, geometry, cfg.sensors, seed, name=f"{cfg.name}_seed{seed}")
    dataset.meta["scenario"] = scenario_to_dict(replace(cfg, seed=seed))
    return dataset
