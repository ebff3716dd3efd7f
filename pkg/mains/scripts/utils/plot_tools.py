"""
Here are functions that turn filter runs into plot-ready columns and a static
overview figure: trajectories over the field-magnitude map plus horizontal and
vertical error curves.
"""

import gc

import numpy as np
import pandas as pd
import xarray as xr
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
# custom fxs
from scripts.evaluation import truth_on
from scripts.utils.logging_tools import log_memory_usage


def plot_frame(traj: xr.Dataset, truth: xr.Dataset, baseline: xr.Dataset = None) -> pd.DataFrame:
    """
    One row per estimate epoch covered by truth: t, truth xy/z, estimate xy/z,
    horizontal/vertical errors, position sigmas and (optionally) the
    stand-alone INS estimate on the same epochs.
    """
    covered, p_gt, _ = truth_on(traj, truth)
    p_hat = traj["p"].values[covered]
    sigma = np.sqrt(traj["P_diag"].values[covered][:, :3])
    err = p_hat - p_gt
    cols = {
        "t": traj["time"].values[covered],
        "x_true": p_gt[:, 0], "y_true": p_gt[:, 1], "z_true": p_gt[:, 2],
        "x_est": p_hat[:, 0], "y_est": p_hat[:, 1], "z_est": p_hat[:, 2],
        "err_horizontal": np.linalg.norm(err[:, :2], axis=1),
        "err_vertical": np.abs(err[:, 2]),
        "sigma_x": sigma[:, 0], "sigma_y": sigma[:, 1], "sigma_z": sigma[:, 2],
    }
    if baseline is not None:
        t = cols["t"]
        p_ins = np.column_stack([np.interp(t, baseline["time"].values, baseline["p"].values[:, i])
                                 for i in range(3)])
        cols.update({"x_ins": p_ins[:, 0], "y_ins": p_ins[:, 1], "z_ins": p_ins[:, 2],
                     "err_horizontal_ins": np.linalg.norm(p_ins[:, :2] - p_gt[:, :2], axis=1)})
    return pd.DataFrame(cols)


def plot_run(frame: pd.DataFrame, field_map: xr.DataArray = None, path=None,
             title: str = "MAINS", aiding_seconds: float = None):
    """
    Renders the overview figure of one run to a PNG at path.

    Parameters:
    - frame (pd.DataFrame): output of plot_frame
    - field_map (xr.DataArray): optional |B| map with dims (y, x), drawn under the paths
    - aiding_seconds (float): marks the end of the aiding window on the error plots
    """
    fig = plt.figure(figsize=(12, 6))
    grid = fig.add_gridspec(2, 2, width_ratios=(1.2, 1))
    ax_map = fig.add_subplot(grid[:, 0])
    ax_hor = fig.add_subplot(grid[0, 1])
    ax_ver = fig.add_subplot(grid[1, 1], sharex=ax_hor)

    if field_map is not None:
        mesh = ax_map.pcolormesh(field_map["x"], field_map["y"], field_map, cmap="viridis", shading="auto")
        fig.colorbar(mesh, ax=ax_map, orientation="vertical", pad=0.02, label="|B| [uT]")
    ax_map.plot(frame["x_true"], frame["y_true"], "k-", linewidth=1.5, label="ground truth")
    ax_map.plot(frame["x_est"], frame["y_est"], "r-", linewidth=1.0, label="MAINS")
    if "x_ins" in frame:
        ax_map.plot(frame["x_ins"], frame["y_ins"], "b--", linewidth=1.0, label="INS")
    ax_map.set_xlabel("x [m]")
    ax_map.set_ylabel("y [m]")
    ax_map.set_aspect("equal", adjustable="datalim")
    ax_map.legend(loc="upper right")
    ax_map.set_title(title)

    ax_hor.plot(frame["t"], frame["err_horizontal"], "r-", label="MAINS")
    if "err_horizontal_ins" in frame:
        ax_hor.plot(frame["t"], frame["err_horizontal_ins"], "b--", label="INS")
    ax_hor.plot(frame["t"], 3 * np.hypot(frame["sigma_x"], frame["sigma_y"]), "r:", label="3 sigma")
    ax_hor.set_ylabel("horizontal error [m]")
    ax_hor.legend(loc="upper left")
    ax_ver.plot(frame["t"], frame["err_vertical"], "r-")
    ax_ver.plot(frame["t"], 3 * frame["sigma_z"], "r:")
    ax_ver.set_ylabel("vertical error [m]")
    ax_ver.set_xlabel("time [s]")
    if aiding_seconds is not None:
        for ax in (ax_hor, ax_ver):
            ax.axvline(frame["t"].iloc[0] + aiding_seconds, color="gray", linestyle=":", linewidth=1)
    fig.tight_layout()

    if path is not None:
        fig.savefig(path, dpi=120)
    plt.close(fig)
    log_memory_usage(f"After plotting {title}")
    gc.collect()
    return path
