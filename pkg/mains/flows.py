"""
A script for organizing the prefect tasks and flows of the pipeline:
simulate a scenario, run the filter on a dataset, evaluate a trajectory
and export plot data.
"""

from pathlib import Path

import numpy as np
from prefect import flow, task
from prefect.cache_policies import NO_CACHE
# custom fxs
from scripts.dataio import (load_dataset, load_geometry, read_trajectory, truth_dataset,
                            write_dataset, write_trajectory)
from scripts.eskf import run_filter
from scripts.evaluation import (compute_metrics, format_table, log_report, metrics_table,
                                nis_summary, report_frame)
from scripts.sim import build_script, field_magnitude_map, make_world, simulate_scenario
from scripts.utils.config_tools import geometry_path, load_run_config, load_scenario_config, scenario_from_dict
from scripts.utils.errors import EvaluationError
from scripts.utils.logging_tools import log_memory_usage, logging_setup
from scripts.utils.plot_tools import plot_frame, plot_run
from scripts.utils.storage_tools import save_table, save_zarr_dataset


# ----- TASKS ----------------------------------------------------------------#
@task(log_prints=True, cache_policy=NO_CACHE)
def simulate_task(scenario_cfg, seed=None):
    """ synthesize the dataset of one scenario """
    return simulate_scenario(scenario_cfg, seed)

@task(log_prints=True, retries=2, cache_policy=NO_CACHE)
def write_dataset_task(dataset, out):
    """ write a dataset directory """
    return write_dataset(dataset, out)

@task(log_prints=True, cache_policy=NO_CACHE)
def load_dataset_task(path):
    """ read and validate a dataset directory """
    return load_dataset(path)

@task(log_prints=True, cache_policy=NO_CACHE)
def run_filter_task(dataset, run_cfg, geometry=None):
    """ run the filter over a whole dataset """
    return run_filter(dataset, geometry, run_cfg)

@task(log_prints=True, retries=2, cache_policy=NO_CACHE)
def save_run_task(traj, out):
    """ trajectory file (CSV) plus the full run output as a zarr store next to it """
    out = Path(out)
    write_trajectory(traj, out)
    save_zarr_dataset(traj, out.with_suffix(".zarr"))
    return out

@task(log_prints=True, cache_policy=NO_CACHE)
def metrics_task(traj, truth, aiding_seconds=60.0, speed_error="scalar"):
    """ score a trajectory against ground truth """
    return compute_metrics(traj, truth, aiding_seconds, speed_error)


def run_overrides(order=None, no_mag=False, aiding_seconds=None):
    """ CLI flags as dotted run-configuration overrides """
    return {
        "model.order": order,
        "filter.use_mag": False if no_mag else None,
        "filter.aiding_seconds": aiding_seconds,
    }


# ----- FLOWS ----------------------------------------------------------------#
@flow(name="simulate-flow", log_prints=True)
def simulate_flow(scenario_path=None, out="data/default", seed=None, overrides=None):
    """ scenario file -> dataset directory """
    logger = logging_setup()
    logger.info(f"Flow: simulating scenario {scenario_path or '(defaults)'}")
    scenario = load_scenario_config(scenario_path, **(overrides or {}))
    dataset = simulate_task(scenario, seed)
    path = write_dataset_task(dataset, out)
    logger.info(f"dataset written to {path}")
    return Path(path)


@flow(name="run-flow", log_prints=True)
def run_flow(dataset_path, out, config_path=None, geometry=None, overrides=None):
    """ dataset + run configuration -> trajectory file """
    logger = logging_setup()
    logger.info(f"Flow: running the filter on {dataset_path}")
    log_memory_usage("at the start of the run flow")
    cfg = load_run_config(config_path, **(overrides or {}))
    dataset = load_dataset_task(dataset_path)
    array = load_geometry(geometry_path(geometry)) if geometry else None
    traj = run_filter_task(dataset, cfg, array)
    summary = nis_summary(traj)
    if summary["updates"]:
        logger.info(f"{summary['updates']} magnetometer updates, mean NIS/dof "
                    f"{summary['mean_nis_per_dof']:.2f}, {100 * summary['inside_band']:.1f}% inside the 95% band")
    path = save_run_task(traj, out)
    logger.info(f"trajectory written to {path}")
    return Path(path)


@flow(name="eval-flow", log_prints=True)
def eval_flow(trajectory_path, dataset_path, out=None, aiding_seconds=60.0,
              speed_error="scalar", verbose=False, system="MAINS"):
    """ trajectory file + dataset ground truth -> MetricsReport (and a CSV row) """
    logger = logging_setup()
    traj = read_trajectory(trajectory_path)
    dataset = load_dataset_task(dataset_path)
    if not dataset.has_truth():
        logger.error(f"dataset {dataset_path} has no ground truth to evaluate against")
        raise EvaluationError(f"dataset {dataset_path} has no groundtruth.csv")
    report = metrics_task(traj, truth_dataset(dataset), aiding_seconds, speed_error)
    name = dataset.meta.get("name", Path(dataset_path).name)
    log_report(report, f"{name} ({system})", verbose)
    logger.info("\n" + format_table(metrics_table([(name, system, report)])))
    if out is not None:
        save_table(report_frame(report, dataset=name, system=system,
                                trajectory=str(trajectory_path)), out)
        logger.info(f"metrics written to {out}")
    return report


@flow(name="plotdata-flow", log_prints=True)
def plotdata_flow(trajectory_path, dataset_path, out_dir, baseline_path=None,
                  scenario_path=None, aiding_seconds=60.0):
    """
    Plot-ready columns (plotdata.csv), the field-magnitude map of a synthetic
    scenario (field_map.zarr) and an overview figure (overview.png).
    """
    logger = logging_setup()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traj = read_trajectory(trajectory_path)
    dataset = load_dataset_task(dataset_path)
    if not dataset.has_truth():
        raise EvaluationError(f"dataset {dataset_path} has no groundtruth.csv to plot against")
    truth = truth_dataset(dataset)
    baseline = read_trajectory(baseline_path) if baseline_path is not None else None
    frame = plot_frame(traj, truth, baseline)

    # field magnitude seen by the array: norm of the mean sensor reading
    readings = dataset.aligned_mag()
    magnitude = np.linalg.norm(readings.reshape(readings.shape[0], -1, 3).mean(axis=1), axis=1)
    frame["field_magnitude"] = np.interp(frame["t"], dataset.times, magnitude)
    save_table(frame, out_dir / "plotdata.csv")

    field_map = None
    scenario = None
    if scenario_path is not None:
        scenario = load_scenario_config(scenario_path)
    elif "scenario" in dataset.meta:
        scenario = scenario_from_dict(dataset.meta["scenario"])
    if scenario is not None:
        seed = int(dataset.meta.get("seed", scenario.seed))
        world = make_world(scenario.world, build_script(scenario.trajectory), dataset.geometry, seed)
        p = truth["p"].values
        extent = (p[:, 0].min() - 0.5, p[:, 0].max() + 0.5, p[:, 1].min() - 0.5, p[:, 1].max() + 0.5)
        field_map = field_magnitude_map(world, extent, float(np.mean(p[:, 2])))
        save_zarr_dataset(field_map.to_dataset(), out_dir / "field_map.zarr")
    else:
        logger.info("recorded dataset: no world model, field map skipped")

    plot_run(frame, field_map, out_dir / "overview.png",
             title=str(dataset.meta.get("name", "MAINS")), aiding_seconds=aiding_seconds)
    logger.info(f"plot data written to {out_dir}")
    return out_dir
