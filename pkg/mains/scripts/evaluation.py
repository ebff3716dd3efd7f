"""
Here are functions that score estimated trajectories against ground truth:
horizontal/vertical position errors, speed errors, covariance consistency
(NEES/NIS against chi-square bounds) and the per-scenario results grid.
"""

from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
import xarray as xr
from scipy.stats import chi2
# custom fxs
from scripts.utils.errors import EvaluationError
from scripts.utils.logging_tools import logging_setup

SPEED_ERRORS = ("scalar", "vector")
TABLE_COLUMNS = {
    "rms_horizontal": "RMS hor. [m]",
    "end_horizontal": "End hor. [m]",
    "rms_vertical": "RMS ver. [m]",
    "end_vertical": "End ver. [m]",
    "rms_speed": "RMS speed [m/s]",
    "segment_length": "Length [m]",
    "segment_duration": "Duration [s]",
}


@dataclass(frozen=True)
class MetricsReport:
    rms_horizontal: float
    end_horizontal: float
    rms_vertical: float
    end_vertical: float
    rms_speed: float            # variant named by speed_error
    segment_length: float
    segment_duration: float
    n_epochs: int
    speed_error: str = "scalar"
    rms_speed_scalar: float = np.nan
    rms_speed_vector: float = np.nan

    def as_dict(self):
        return asdict(self)


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def truth_on(traj: xr.Dataset, truth: xr.Dataset):
    """ truth positions/velocities interpolated at the estimate epochs it covers """
    t = traj["time"].values
    t_truth = truth["time"].values
    covered = (t >= t_truth[0]) & (t <= t_truth[-1])
    p = np.column_stack([np.interp(t[covered], t_truth, truth["p"].values[:, i]) for i in range(3)])
    v = np.column_stack([np.interp(t[covered], t_truth, truth["v"].values[:, i]) for i in range(3)])
    return covered, p, v


def evaluation_mask(traj: xr.Dataset, aiding_seconds: float):
    """ epochs after the aiding window, counted from the first estimate """
    t = traj["time"].values
    return t >= t[0] + aiding_seconds


def compute_metrics(traj: xr.Dataset, truth: xr.Dataset, aiding_seconds: float = 60.0,
                    speed_error: str = "scalar") -> MetricsReport:
    """
    Position and speed errors over the post-aiding segment. Horizontal error is
    the planar norm of the position error, vertical its |z| component.

    speed_error:
        'scalar' |(|v_hat| - |v_gt|)|, 'vector' |v_hat - v_gt|; both are stored.
    """
    if speed_error not in SPEED_ERRORS:
        raise EvaluationError(f"speed_error must be one of {SPEED_ERRORS}, got {speed_error!r}")
    covered, p_truth, v_truth = truth_on(traj, truth)
    segment = evaluation_mask(traj, aiding_seconds)[covered]
    if not segment.any():
        t = traj["time"].values
        raise EvaluationError(
            f"empty evaluation segment: estimate spans {t[-1] - t[0]:.2f} s, aiding window is "
            f"{aiding_seconds:.2f} s and ground truth covers {np.count_nonzero(covered)} epoch(s)")

    t = traj["time"].values[covered][segment]
    p_hat = traj["p"].values[covered][segment]
    v_hat = traj["v"].values[covered][segment]
    p_gt, v_gt = p_truth[segment], v_truth[segment]

    err = p_hat - p_gt
    horizontal = np.linalg.norm(err[:, :2], axis=1)
    vertical = np.abs(err[:, 2])
    scalar = np.abs(np.linalg.norm(v_hat, axis=1) - np.linalg.norm(v_gt, axis=1))
    vector = np.linalg.norm(v_hat - v_gt, axis=1)
    rms_scalar, rms_vector = _rms(scalar), _rms(vector)
    return MetricsReport(
        rms_horizontal=_rms(horizontal),
        end_horizontal=float(horizontal[-1]),
        rms_vertical=_rms(vertical),
        end_vertical=float(vertical[-1]),
        rms_speed=rms_scalar if speed_error == "scalar" else rms_vector,
        segment_length=float(np.sum(np.linalg.norm(np.diff(p_gt, axis=0), axis=1))),
        segment_duration=float(t[-1] - t[0]),
        n_epochs=int(t.shape[0]),
        speed_error=speed_error,
        rms_speed_scalar=rms_scalar,
        rms_speed_vector=rms_vector)


# ----- CONSISTENCY ----------------------------------------------------------#
def position_covariances(traj: xr.Dataset):
    """ 3x3 position covariance per epoch; diagonal only when read back from a file """
    if "P_pos" in traj:
        return traj["P_pos"].values
    diag = traj["P_diag"].values[:, :3]
    return np.einsum("ki,ij->kij", diag, np.eye(3))


def position_nees(traj: xr.Dataset, truth: xr.Dataset):
    """ e_p^T P_pp^-1 e_p at every estimate epoch covered by truth """
    covered, p_truth, _ = truth_on(traj, truth)
    err = traj["p"].values[covered] - p_truth
    P = position_covariances(traj)[covered]
    return np.einsum("ki,ki->k", err, np.linalg.solve(P, err[..., None])[..., 0])


def within_envelope(traj: xr.Dataset, truth: xr.Dataset, n_sigma: float = 3.0):
    """ per epoch: every position error component inside n_sigma standard deviations """
    covered, p_truth, _ = truth_on(traj, truth)
    err = np.abs(traj["p"].values[covered] - p_truth)
    sigma = np.sqrt(traj["P_diag"].values[covered][:, :3])
    return np.all(err <= n_sigma * sigma, axis=1)


def nees_bounds(dof: int, n_runs: int = 1, probability: float = 0.95):
    """ two-sided chi-square bounds of the run-averaged NEES (or NIS) """
    alpha = (1.0 - probability) / 2.0
    total = dof * n_runs
    return chi2.ppf(alpha, total) / n_runs, chi2.ppf(1.0 - alpha, total) / n_runs


def nis_summary(traj: xr.Dataset, probability: float = 0.95):
    """ mean NIS per degree of freedom and the share of updates inside the chi-square band """
    nis = traj["nis"].values
    dof = traj["nis_dof"].values
    used = np.isfinite(nis) & (dof > 0)
    if not used.any():
        return {"updates": 0, "mean_nis_per_dof": np.nan, "inside_band": np.nan}
    lo = chi2.ppf((1.0 - probability) / 2.0, dof[used])
    hi = chi2.ppf(1.0 - (1.0 - probability) / 2.0, dof[used])
    inside = (nis[used] >= lo) & (nis[used] <= hi)
    return {"updates": int(used.sum()),
            "mean_nis_per_dof": float(np.mean(nis[used] / dof[used])),
            "inside_band": float(inside.mean())}


# ----- TABLES ---------------------------------------------------------------#
def metrics_table(rows) -> pd.DataFrame:
    """
    Results grid with one row per (dataset, system) pair.

    input:
        rows: iterable of (dataset name, system label, MetricsReport)
    """
    records = []
    for dataset, system, report in rows:
        record = {"Dataset": dataset, "System": system}
        record.update({label: getattr(report, key) for key, label in TABLE_COLUMNS.items()})
        records.append(record)
    return pd.DataFrame(records, columns=["Dataset", "System"] + list(TABLE_COLUMNS.values()))


def format_table(table: pd.DataFrame) -> str:
    return table.to_string(index=False, float_format=lambda x: f"{x:.2f}")


def report_frame(report: MetricsReport, **labels) -> pd.DataFrame:
    """ one-row frame of a report, for the machine-readable eval output """
    return pd.DataFrame([{**labels, **report.as_dict()}])


def log_report(report: MetricsReport, title: str = "metrics", verbose: bool = False):
    logger = logging_setup()
    logger.info(f"{title}: RMS hor {report.rms_horizontal:.3f} m, end hor {report.end_horizontal:.3f} m, "
                f"RMS ver {report.rms_vertical:.3f} m, end ver {report.end_vertical:.3f} m, "
                f"RMS speed ({report.speed_error}) {report.rms_speed:.3f} m/s over "
                f"{report.segment_length:.1f} m / {report.segment_duration:.1f} s")
    if verbose:
        logger.info(f"{title}: RMS speed scalar {report.rms_speed_scalar:.4f} m/s, "
                    f"vector {report.rms_speed_vector:.4f} m/s, {report.n_epochs} epochs")
