import numpy as np
import pandas as pd
import pytest
import xarray as xr
# custom fxs
from scripts.dataio import read_trajectory, write_trajectory
from scripts.evaluation import (TABLE_COLUMNS, MetricsReport, compute_metrics, format_table, metrics_table,
                                nees_bounds, nis_summary, position_nees, report_frame, within_envelope)
from scripts.utils.errors import EvaluationError
from scripts.utils.plot_tools import plot_frame, plot_run

N = 1001
DT = 0.1


def trajectory(p, v=None, t=None, sigma=0.1):
    n = p.shape[0]
    t = np.arange(n) * DT if t is None else t
    v = np.zeros((n, 3)) if v is None else v
    return xr.Dataset(
        {"p": (("time", "axis"), p), "v": (("time", "axis"), v),
         "q": (("time", "quat"), np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))),
         "P_diag": (("time", "state"), np.full((n, 15), sigma ** 2))},
        coords={"time": t, "axis": list("xyz"), "quat": list("wxyz")})


@pytest.fixture
def walk():
    """ ground truth: 1 m/s along x """
    t = np.arange(N) * DT
    p = np.column_stack([t, np.zeros(N), np.full(N, 0.8)])
    v = np.tile([1.0, 0.0, 0.0], (N, 1))
    return trajectory(p, v)


def test_identical_trajectories_score_zero(walk):
    report = compute_metrics(walk, walk, aiding_seconds=10.0)
    assert report.rms_horizontal == 0.0
    assert report.end_horizontal == 0.0
    assert report.rms_vertical == 0.0
    assert report.rms_speed == 0.0
    assert report.segment_duration == pytest.approx(90.0)
    assert report.segment_length == pytest.approx(90.0)
    assert report.n_epochs == 901


def test_constant_offset(walk):
    shifted = walk.copy(deep=True)
    shifted["p"].values[:, 0] += 1.0
    report = compute_metrics(shifted, walk, aiding_seconds=10.0)
    assert report.rms_horizontal == pytest.approx(1.0)
    assert report.end_horizontal == pytest.approx(1.0)
    assert report.rms_vertical == 0.0
    assert report.end_vertical == 0.0


def test_vertical_ramp(walk):
    drifting = walk.copy(deep=True)
    t = walk["time"].values
    segment = t >= 10.0
    drifting["p"].values[segment, 2] += 2.0 * (t[segment] - 10.0) / 90.0
    report = compute_metrics(drifting, walk, aiding_seconds=10.0)
    assert report.rms_vertical == pytest.approx(2.0 / np.sqrt(3.0), rel=0.01)
    assert report.end_vertical == pytest.approx(2.0)
    assert report.rms_horizontal == 0.0


def test_speed_error_variants(walk):
    sideways = walk.copy(deep=True)
    sideways["v"].values[:] = [0.0, 1.0, 0.0]
    scalar = compute_metrics(sideways, walk, aiding_seconds=10.0, speed_error="scalar")
    vector = compute_metrics(sideways, walk, aiding_seconds=10.0, speed_error="vector")
    assert scalar.rms_speed == pytest.approx(0.0)
    assert vector.rms_speed == pytest.approx(np.sqrt(2.0))
    assert scalar.rms_speed_vector == vector.rms_speed
    with pytest.raises(EvaluationError):
        compute_metrics(walk, walk, speed_error="velocity")


def test_metrics_are_invariant_to_a_common_time_shift(walk):
    estimate = walk.copy(deep=True)
    estimate["p"].values[:, 1] += np.sin(walk["time"].values)
    shift = 1234.5
    a = compute_metrics(estimate, walk, aiding_seconds=10.0)
    b = compute_metrics(estimate.assign_coords(time=estimate["time"].values + shift),
                        walk.assign_coords(time=walk["time"].values + shift), aiding_seconds=10.0)
    for key, value in a.as_dict().items():
        if isinstance(value, float):
            assert getattr(b, key) == pytest.approx(value, rel=1e-9, abs=1e-12)


def test_file_round_trip_gives_same_metrics(walk, tmp_path):
    estimate = walk.copy(deep=True)
    estimate["p"].values[:, 0] += 0.01 * walk["time"].values
    path = write_trajectory(estimate, tmp_path / "est.csv")
    direct = compute_metrics(estimate, walk, aiding_seconds=10.0)
    via_file = compute_metrics(read_trajectory(path), walk, aiding_seconds=10.0)
    for key, value in direct.as_dict().items():
        if isinstance(value, float):
            assert getattr(via_file, key) == pytest.approx(value, rel=1e-12)


def test_empty_segment(walk):
    with pytest.raises(EvaluationError, match="empty evaluation segment"):
        compute_metrics(walk, walk, aiding_seconds=500.0)


def test_partial_truth_coverage(walk):
    truth = walk.isel(time=slice(0, 500))
    report = compute_metrics(walk, truth, aiding_seconds=10.0)
    assert report.n_epochs == 400


def test_consistency_checks(walk, rng):
    noisy = walk.copy(deep=True)
    noisy["p"].values[:] += 0.1 * rng.standard_normal((N, 3))
    nees = position_nees(noisy, walk)
    lo, hi = nees_bounds(3, n_runs=1, probability=0.99)
    assert 0.95 < np.mean((nees >= lo) & (nees <= hi))
    assert np.mean(nees) == pytest.approx(3.0, rel=0.15)
    assert within_envelope(noisy, walk, n_sigma=3.0).mean() > 0.97

    lo_20, hi_20 = nees_bounds(3, n_runs=20)
    assert lo < lo_20 < 3.0 < hi_20 < hi


def test_nis_summary():
    n = 5
    traj = xr.Dataset({"nis": ("time", np.array([np.nan, 15.0, 14.0, 100.0, np.nan])),
                       "nis_dof": ("time", np.array([0, 15, 15, 15, 0]))},
                      coords={"time": np.arange(n) * 0.01})
    summary = nis_summary(traj)
    assert summary["updates"] == 3
    assert summary["inside_band"] == pytest.approx(2 / 3)
    assert summary["mean_nis_per_dof"] == pytest.approx((15 + 14 + 100) / 45)
    empty = nis_summary(traj.assign(nis_dof=("time", np.zeros(n, dtype=int))))
    assert empty["updates"] == 0


def test_results_grid(walk):
    report = compute_metrics(walk, walk, aiding_seconds=10.0)
    table = metrics_table([("LP-1", "INS", report), ("LP-1", "MAINS", report)])
    assert list(table.columns) == ["Dataset", "System"] + list(TABLE_COLUMNS.values())
    assert len(table) == 2
    assert "RMS hor. [m]" in format_table(table)
    row = report_frame(report, dataset="LP-1", system="MAINS")
    assert row.loc[0, "rms_horizontal"] == 0.0
    assert row.loc[0, "speed_error"] == "scalar"
    assert isinstance(report, MetricsReport)


def test_plot_helpers(walk, tmp_path):
    estimate = walk.copy(deep=True)
    estimate["p"].values[:, 1] += 0.2
    frame = plot_frame(estimate, walk, baseline=walk)
    assert isinstance(frame, pd.DataFrame)
    assert len(frame) == N
    np.testing.assert_allclose(frame["err_horizontal"], 0.2)
    np.testing.assert_allclose(frame["err_horizontal_ins"], 0.0)
    field_map = xr.DataArray(np.ones((3, 4)), dims=("y", "x"),
                             coords={"y": np.arange(3.0), "x": np.arange(4.0)})
    path = plot_run(frame, field_map, tmp_path / "overview.png", title="walk", aiding_seconds=10.0)
    assert path.exists() and path.stat().st_size > 0
