"""
Dataset and trajectory files.

A dataset is a directory of plain-text files:
    imu.csv          t, sx, sy, sz, wx, wy, wz           (s, m/s^2, rad/s; body frame)
    mag.csv          t, m0_x, m0_y, m0_z, ..., m{N-1}_z   (s, uT; body frame, fixed sensor order)
    groundtruth.csv  t, px, py, pz, qw, qx, qy, qz[, vx, vy, vz]   (optional; m, -, m/s; navigation frame)
    geometry.txt     id x y z per magnetometer (m, body frame)
    meta.yaml        name, units, rates, n_sensors, files

A trajectory file is one CSV row per epoch: t, px, py, pz, qw, qx, qy, qz,
vx, vy, vz, P0 ... P{n-1} (diagonal of the error covariance).
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import xarray as xr
import yaml
from scipy.spatial.transform import Rotation, Slerp
# custom fxs
from scripts.geom import normalize
from scripts.magmodel import ArrayGeometry
from scripts.utils.errors import DatasetError
from scripts.utils.logging_tools import logging_setup

IMU_COLUMNS = ["t", "sx", "sy", "sz", "wx", "wy", "wz"]
TRUTH_COLUMNS = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"]
VELOCITY_COLUMNS = ["vx", "vy", "vz"]
TIME_EPS = 1e-9  # s, slack for timestamps that tie on the association tolerance
FILES = {"imu": "imu.csv", "mag": "mag.csv", "truth": "groundtruth.csv",
         "geometry": "geometry.txt", "meta": "meta.yaml"}
UNITS = {"t": "s", "specific_force": "m/s^2", "angular_rate": "rad/s",
         "magnetic_field": "uT", "position": "m", "velocity": "m/s"}


def mag_columns(n_sensors: int):
    return ["t"] + [f"m{i}_{axis}" for i in range(n_sensors) for axis in "xyz"]


@dataclass
class Dataset:
    imu: pd.DataFrame
    mag: pd.DataFrame
    geometry: ArrayGeometry
    truth: pd.DataFrame = None
    meta: dict = field(default_factory=dict)

    @property
    def n_sensors(self):
        return self.geometry.n_sensors

    @property
    def times(self):
        return self.imu["t"].to_numpy()

    def imu_arrays(self):
        """ (t, specific force (n,3), angular rate (n,3)) """
        return (self.imu["t"].to_numpy(),
                self.imu[["sx", "sy", "sz"]].to_numpy(),
                self.imu[["wx", "wy", "wz"]].to_numpy())

    def mag_epochs(self, tolerance: float = 0.005):
        """ IMU epoch index of every magnetometer snapshot, -1 when none lies within tolerance (s) """
        imu_t = self.imu["t"].to_numpy()
        right = pd.DataFrame({"t": imu_t, "epoch": np.arange(imu_t.shape[0])})
        merged = pd.merge_asof(self.mag[["t"]], right, on="t", direction="nearest",
                               tolerance=tolerance + TIME_EPS)
        return merged["epoch"].fillna(-1).to_numpy(dtype=int)

    def mag_association(self, tolerance: float = 0.005):
        """
        magnetometer rows placed at the IMU epoch nearest to each snapshot,
        shape (n_imu, 3N), plus the mask of epochs that received a snapshot.
        Two snapshots on one epoch: the closer one in time is kept.
        """
        imu_t = self.imu["t"].to_numpy()
        values = self.mag[mag_columns(self.n_sensors)[1:]].to_numpy(dtype=float)
        epochs = self.mag_epochs(tolerance)
        matched = np.flatnonzero(epochs >= 0)
        gap = np.abs(self.mag["t"].to_numpy()[matched] - imu_t[epochs[matched]])
        # closest last so it wins the assignment
        matched = matched[np.argsort(-gap, kind="stable")]
        rows = np.full((imu_t.shape[0], values.shape[1]), np.nan)
        rows[epochs[matched]] = values[matched]
        present = np.zeros(imu_t.shape[0], dtype=bool)
        present[epochs[matched]] = True
        return rows, present

    def aligned_mag(self, tolerance: float = 0.005):
        """ magnetometer rows per IMU epoch, NaN rows where no snapshot was associated """
        return self.mag_association(tolerance)[0]

    def has_truth(self):
        return self.truth is not None and len(self.truth) > 0

    def truth_at(self, times):
        """ ground truth interpolated at the given times: dict with p, v, q arrays """
        truth = self.truth
        t = truth["t"].to_numpy()
        out = {}
        out["p"] = np.column_stack([np.interp(times, t, truth[c]) for c in ("px", "py", "pz")])
        rotations = Rotation.from_quat(truth[["qx", "qy", "qz", "qw"]].to_numpy())
        q = np.roll(Slerp(t, rotations)(np.clip(times, t[0], t[-1])).as_quat(), 1, axis=1)
        out["q"] = q * np.where(q[:, :1] < 0, -1.0, 1.0)
        out["v"] = np.column_stack([np.interp(times, t, v) for v in truth_velocity(truth).T])
        return out


def truth_velocity(truth: pd.DataFrame):
    """ truth velocity columns, or the numerical derivative of positions if absent """
    if all(c in truth.columns for c in VELOCITY_COLUMNS):
        return truth[VELOCITY_COLUMNS].to_numpy()
    t = truth["t"].to_numpy()
    pos = truth[["px", "py", "pz"]].to_numpy()
    return np.gradient(pos, t, axis=0)


# ----- GEOMETRY -------------------------------------------------------------#
def load_geometry(path) -> ArrayGeometry:
    """ reads a geometry table: one row per magnetometer, id x y z (m, body frame) """
    path = Path(path)
    if not path.exists():
        raise DatasetError("geometry file not found", path)
    table = pd.read_csv(path, sep=r"[\s,]+", engine="python", comment="#",
                        header=None, names=["id", "x", "y", "z"])
    if table.empty:
        raise DatasetError("geometry file holds no magnetometers", path)
    positions = table[["x", "y", "z"]].to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(positions).all(axis=1))
    if bad.size:
        raise DatasetError("non-finite magnetometer position", path, int(bad[0]))
    return ArrayGeometry(positions=positions, ids=tuple(table["id"].astype(str)), name=path.stem)


def write_geometry(geometry: ArrayGeometry, path):
    path = Path(path)
    with open(path, "w") as f:
        f.write("# id x y z  (m, body frame)\n")
        for sensor_id, (x, y, z) in zip(geometry.ids, geometry.positions):
            f.write(f"{sensor_id} {float(x)!r} {float(y)!r} {float(z)!r}\n")


# ----- DATASETS -------------------------------------------------------------#
def _check_widths(path: Path):
    """ every line must have the header's field count """
    expected = None
    with open(path, "r") as f:
        for row, line in enumerate(f):
            if not line.strip():
                continue
            width = line.count(",") + 1
            if expected is None:
                expected = width
            elif width != expected:
                # row 0 is the header, data rows count from 0 after it
                raise DatasetError(
                    f"{path.name} has {width} fields where {expected} were expected",
                    path, row - 1)


def _check_monotone(frame: pd.DataFrame, path: Path):
    dt = np.diff(frame["t"].to_numpy())
    bad = np.flatnonzero(~(dt > 0))
    if bad.size:
        raise DatasetError(
            f"timestamps in {path.name} are not strictly increasing", path, int(bad[0]) + 1)


def _read_stream(path: Path, columns, optional=()):
    if not path.exists():
        raise DatasetError(f"missing dataset file {path.name}", path)
    _check_widths(path)
    frame = pd.read_csv(path)
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DatasetError(f"{path.name} lacks column(s) {missing}", path)
    keep = list(columns) + [c for c in optional if c in frame.columns]
    extra = [c for c in frame.columns if c not in keep]
    if extra:
        raise DatasetError(f"{path.name} has unexpected column(s) {extra}", path)
    _check_monotone(frame, path)
    return frame[keep].astype(float)


def load_dataset(path) -> Dataset:
    """ reads and validates a dataset directory """
    logger = logging_setup()
    root = Path(path)
    meta_path = root / FILES["meta"]
    if not meta_path.exists():
        raise DatasetError("missing metadata descriptor meta.yaml", root)
    with open(meta_path, "r") as f:
        meta = yaml.safe_load(f) or {}

    geometry = load_geometry(root / meta.get("files", {}).get("geometry", FILES["geometry"]))
    n_sensors = int(meta.get("n_sensors", geometry.n_sensors))
    if n_sensors != geometry.n_sensors:
        raise DatasetError(
            f"meta.yaml declares {n_sensors} magnetometers but the geometry has {geometry.n_sensors}",
            meta_path)

    imu = _read_stream(root / FILES["imu"], IMU_COLUMNS)
    mag_path = root / FILES["mag"]
    if mag_path.exists():
        header = pd.read_csv(mag_path, nrows=0).columns
        if len(header) != 1 + 3 * n_sensors:
            raise DatasetError(
                f"mag.csv rows have width {len(header) - 1}, expected 3N = {3 * n_sensors}",
                mag_path)
    mag = _read_stream(mag_path, mag_columns(n_sensors))

    truth = None
    truth_path = root / FILES["truth"]
    if truth_path.exists():
        truth = _read_stream(truth_path, TRUTH_COLUMNS, optional=VELOCITY_COLUMNS)

    logger.info(f"loaded dataset {meta.get('name', root.name)}: {len(imu)} IMU rows, "
                f"{len(mag)} magnetometer rows, N={n_sensors}, "
                f"ground truth={'yes' if truth is not None else 'no'}")
    return Dataset(imu=imu, mag=mag, geometry=geometry, truth=truth, meta=meta)


def write_dataset(dataset: Dataset, path):
    """ writes the dataset directory (floats at full precision) """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    dataset.imu.to_csv(root / FILES["imu"], index=False)
    dataset.mag.to_csv(root / FILES["mag"], index=False)
    if dataset.has_truth():
        dataset.truth.to_csv(root / FILES["truth"], index=False)
    write_geometry(dataset.geometry, root / FILES["geometry"])
    meta = dict(dataset.meta)
    meta.update({
        "n_sensors": dataset.n_sensors,
        "units": UNITS,
        "files": {k: v for k, v in FILES.items() if k != "meta"},
    })
    with open(root / FILES["meta"], "w") as f:
        yaml.safe_dump(meta, f, sort_keys=False)
    return root


def convert_recording(imu_csv, mag_csv, geometry_path, out_dir, column_map: dict,
                      truth_csv=None, time_scale: float = 1.0, name: str = None):
    """
    Maps a recording with arbitrary column names into the dataset schema.

    column_map: {"imu": {schema column: source column}, "mag": {...}, "truth": {...}}
    time_scale: multiplier taking source timestamps to seconds (e.g. 1e-3 for ms)
    """
    geometry = load_geometry(geometry_path)

    def remap(src, stream, columns):
        frame = pd.read_csv(src)
        mapping = column_map.get(stream, {})
        out = pd.DataFrame({c: frame[mapping.get(c, c)] for c in columns})
        out["t"] = out["t"] * time_scale
        return out

    imu = remap(imu_csv, "imu", IMU_COLUMNS)
    mag = remap(mag_csv, "mag", mag_columns(geometry.n_sensors))
    truth = None
    if truth_csv is not None:
        wanted = TRUTH_COLUMNS + [c for c in VELOCITY_COLUMNS if c in column_map.get("truth", {})]
        truth = remap(truth_csv, "truth", wanted)
    meta = {"name": name or Path(out_dir).name, "source": "converted recording"}
    return write_dataset(Dataset(imu=imu, mag=mag, geometry=geometry, truth=truth, meta=meta), out_dir)


# ----- TRAJECTORIES ---------------------------------------------------------#
def trajectory_frame(traj: xr.Dataset) -> pd.DataFrame:
    """ flattens a filter output into the trajectory-file columns """
    cols = {"t": traj["time"].values}
    for i, c in enumerate("xyz"):
        cols[f"p{c}"] = traj["p"].values[:, i]
    for i, c in enumerate("wxyz"):
        cols[f"q{c}"] = traj["q"].values[:, i]
    for i, c in enumerate("xyz"):
        cols[f"v{c}"] = traj["v"].values[:, i]
    for i in range(traj["P_diag"].shape[1]):
        cols[f"P{i}"] = traj["P_diag"].values[:, i]
    return pd.DataFrame(cols)


def write_trajectory(traj: xr.Dataset, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trajectory_frame(traj).to_csv(path, index=False)
    return path


def read_trajectory(path) -> xr.Dataset:
    """ reads a trajectory file back into the xarray layout of a filter run """
    path = Path(path)
    if not path.exists():
        raise DatasetError("trajectory file not found", path)
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError, OSError) as e:
        raise DatasetError(f"unreadable trajectory file: {e}", path) from e
    needed = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz"]
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise DatasetError(f"trajectory file lacks column(s) {missing}", path)
    _check_monotone(frame, path)
    p_cols = [c for c in frame.columns if c.startswith("P") and c[1:].isdigit()]
    return xr.Dataset(
        {
            "p": (("time", "axis"), frame[["px", "py", "pz"]].to_numpy()),
            "v": (("time", "axis"), frame[["vx", "vy", "vz"]].to_numpy()),
            "q": (("time", "quat"), frame[["qw", "qx", "qy", "qz"]].to_numpy()),
            "P_diag": (("time", "state"), frame[p_cols].to_numpy()),
        },
        coords={"time": frame["t"].to_numpy(), "axis": list("xyz"), "quat": list("wxyz")},
        attrs={"source": str(path)})


def truth_dataset(dataset: Dataset) -> xr.Dataset:
    """ ground truth in the same xarray layout as a trajectory """
    truth = dataset.truth
    q = truth[["qw", "qx", "qy", "qz"]].to_numpy()
    return xr.Dataset(
        {
            "p": (("time", "axis"), truth[["px", "py", "pz"]].to_numpy()),
            "v": (("time", "axis"), truth_velocity(truth)),
            "q": (("time", "quat"), np.apply_along_axis(normalize, 1, q)),
        },
        coords={"time": truth["t"].to_numpy(), "axis": list("xyz"), "quat": list("wxyz")})
