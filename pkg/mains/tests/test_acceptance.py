"""
End-to-end runs over the shipped scenarios. Minutes of CPU time, so they are
deselected by default: run with `pytest -m slow`.
"""

from dataclasses import replace

import numpy as np
import pytest
# custom fxs
from scripts.dataio import truth_dataset
from scripts.eskf import run_filter
from scripts.evaluation import (compute_metrics, evaluation_mask, metrics_table, nees_bounds, nis_summary,
                               truth_on, within_envelope)
from scripts.sim import simulate_scenario
from scripts.utils.config_tools import CONFIG_DIR, RunConfig, apply_overrides, load_scenario_config
from scripts.utils.logging_tools import logging_setup

pytestmark = pytest.mark.slow


def filter_pair(dataset, cfg=None):
    cfg = cfg or RunConfig()
    ins_cfg = replace(cfg, filter=replace(cfg.filter, use_mag=False))
    return run_filter(dataset, cfg=cfg), run_filter(dataset, cfg=ins_cfg)


def test_array_aiding_beats_dead_reckoning_tenfold():
    logger = logging_setup()
    scenario = load_scenario_config(CONFIG_DIR / "scenario_default.yaml")
    # second order keeps the transport mismatch along the dipole field small
    cfg = apply_overrides(RunConfig(), {"model.order": 2})
    ratios = []
    for seed in range(5):
        dataset = simulate_scenario(scenario, seed)
        truth = truth_dataset(dataset)
        mains, ins = filter_pair(dataset, cfg)
        mains_end = compute_metrics(mains, truth).end_horizontal
        ins_end = compute_metrics(ins, truth).end_horizontal
        ratios.append(ins_end / mains_end)
        logger.info(f"seed {seed}: INS end hor. {ins_end:.2f} m, MAINS end hor. {mains_end:.3f} m, "
                    f"ratio {ratios[-1]:.1f}")
    assert min(ratios) >= 10.0, f"INS/MAINS end-error ratios per seed: {np.round(ratios, 2)}"


def test_exact_model_errors_stay_inside_three_sigma():
    scenario = load_scenario_config(CONFIG_DIR / "scenarios" / "exact_model.yaml")
    cfg = apply_overrides(RunConfig(), {"filter.aiding_seconds": 10.0})
    inside = []
    for seed in range(20):
        dataset = simulate_scenario(scenario, seed)
        traj = run_filter(dataset, cfg=cfg)
        covered, _, _ = truth_on(traj, truth_dataset(dataset))
        free = evaluation_mask(traj, cfg.filter.aiding_seconds)[covered]
        assert free.sum() > 0
        inside.append(within_envelope(traj, truth_dataset(dataset))[free])
    assert np.mean(np.concatenate(inside)) >= 0.95


def test_exact_model_innovations_are_white():
    scenario = load_scenario_config(CONFIG_DIR / "scenarios" / "exact_model.yaml")
    cfg = apply_overrides(RunConfig(), {"filter.aiding_seconds": 10.0})
    for seed in range(3):
        traj = run_filter(simulate_scenario(scenario, seed), cfg=cfg)
        summary = nis_summary(traj, probability=0.95)
        dof = int(traj["nis_dof"].values.max())
        low, high = nees_bounds(dof, n_runs=1, probability=0.95)
        assert summary["updates"] > 0
        assert low / dof <= summary["mean_nis_per_dof"] <= high / dof
        assert summary["inside_band"] >= 0.9


def test_dataset_families_grid():
    rows = []
    for name in ("LP", "NP", "NT"):
        dataset = simulate_scenario(load_scenario_config(CONFIG_DIR / "scenarios" / f"{name}.yaml"))
        truth = truth_dataset(dataset)
        mains, ins = filter_pair(dataset)
        rows.append((name, "INS", compute_metrics(ins, truth)))
        rows.append((name, "MAINS", compute_metrics(mains, truth)))
    table = metrics_table(rows)
    assert len(table) == 6
    assert np.isfinite(table.iloc[:, 2:].to_numpy(dtype=float)).all()
    mains_rows = table[table["System"] == "MAINS"]
    ins_rows = table[table["System"] == "INS"]
    assert (mains_rows["End hor. [m]"].to_numpy() < ins_rows["End hor. [m]"].to_numpy()).all()
