"""
This is the main orchestration flow for building the results grid: every
source (scenario file or recorded dataset directory) is filtered with and
without magnetometer updates and scored against its ground truth.
"""

from pathlib import Path

from prefect import flow, task
from prefect.cache_policies import NO_CACHE
from prefect.futures import wait
# custom fxs
from flows import (load_dataset_task, metrics_task, run_filter_task, save_run_task,
                   simulate_task, write_dataset_task)
from scripts.dataio import FILES, truth_dataset
from scripts.evaluation import format_table, metrics_table
from scripts.utils.config_tools import apply_overrides, load_run_config, load_scenario_config
from scripts.utils.errors import EvaluationError, MainsError
from scripts.utils.logging_tools import log_memory_usage, logging_setup
from scripts.utils.storage_tools import save_table

SYSTEMS = {"INS": {"filter.use_mag": False}, "MAINS": {}}


def is_dataset_dir(source) -> bool:
    return Path(source).is_dir() and (Path(source) / FILES["meta"]).exists()


@flow(name="source-evaluation-subflow", log_prints=True)
def source_evaluation_subflow(source, out_dir, run_config_path=None, seed=None,
                              overrides=None, speed_error="scalar"):
    """ one grid row per system for a single scenario or dataset """
    logger = logging_setup()
    out_dir = Path(out_dir)
    if is_dataset_dir(source):
        dataset = load_dataset_task(source)
    else:
        scenario = load_scenario_config(source)
        dataset = simulate_task(scenario, seed)
        write_dataset_task(dataset, out_dir / dataset.meta["name"])
    name = dataset.meta.get("name", Path(source).stem)
    if not dataset.has_truth():
        logger.error(f"{name}: no ground truth, cannot be scored")
        raise EvaluationError(f"{source} has no ground truth")

    cfg = load_run_config(run_config_path, **(overrides or {}))
    # both filter runs share the immutable dataset
    futures = {system: run_filter_task.submit(dataset, apply_overrides(cfg, extra))
               for system, extra in SYSTEMS.items()}
    truth = truth_dataset(dataset)
    rows = []
    for system, future in futures.items():
        traj = future.result()
        save_run_task(traj, out_dir / f"{name}_{system.lower()}.csv")
        report = metrics_task(traj, truth, cfg.filter.aiding_seconds, speed_error)
        rows.append((name, system, report))
    logger.info(f"{name}: INS end hor. {rows[0][2].end_horizontal:.2f} m, "
                f"MAINS end hor. {rows[1][2].end_horizontal:.2f} m")
    return rows


@task(log_prints=True, cache_policy=NO_CACHE)
def evaluate_source_task(source, out_dir, run_config_path=None, seed=None,
                         overrides=None, speed_error="scalar"):
    return source_evaluation_subflow(source, out_dir, run_config_path, seed, overrides, speed_error)


@flow(name="table-orchestration-flow", log_prints=True)
def table_orchestration_flow(sources, out_dir="results", run_config_path=None, seeds=None,
                             overrides=None, speed_error="scalar"):
    logger = logging_setup()
    log_memory_usage("at the start of the table orchestration flow")
    out_dir = Path(out_dir)
    seeds = list(seeds) if seeds else [None]
    if not sources:
        raise MainsError("no scenario files or dataset directories given")

    futures = {}
    for source in sources:
        for seed in (seeds if not is_dataset_dir(source) else [None]):
            futures[(str(source), seed)] = evaluate_source_task.submit(
                source, out_dir, run_config_path, seed, overrides, speed_error)
    logger.info(f"Triggered {len(futures)} source evaluations.")
    wait(list(futures.values()))

    rows, failed = [], []
    for (source, seed), future in futures.items():
        if future.state.is_failed():
            logger.error(f"Evaluation of {source} (seed {seed}) failed!")
            failed.append(f"{source} (seed {seed})")
            continue
        rows.extend(future.result())

    if rows:
        table = metrics_table(rows)
        save_table(table, out_dir / "table.csv")
        logger.info("\n" + format_table(table))
    log_memory_usage("after building the results grid")
    if failed:
        raise MainsError(f"{len(failed)} source evaluation(s) failed: {', '.join(failed)}")
    logger.info("results grid completed.")
    return table
