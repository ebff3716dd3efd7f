"""
Shared fixtures: shipped array geometries, a short square-loop script over a
small dipole world, and datasets synthesized from them.
"""

from dataclasses import replace

import numpy as np
import pytest
# custom fxs
from scripts.dataio import load_geometry
from scripts.sim import build_script, make_world, synthesize
from scripts.utils.config_tools import GEOMETRY_DIR, SensorConfig, TrajectoryConfig, WorldConfig

QUIET_SENSORS = SensorConfig(accel_density=0.0, gyro_density=0.0,
                             accel_bias=(0.0, 0.0, 0.0), gyro_bias=(0.0, 0.0, 0.0),
                             accel_bias_rw=0.0, gyro_bias_rw=0.0, mag_std=0.0)


def short_loop(**kwargs) -> TrajectoryConfig:
    """ one lap of a 2 m square, about 10 s in total """
    values = dict(kind="square", side=2.0, laps=1.0, speed=1.0, rest_seconds=1.0,
                  ramp_seconds=1.0, final_rest_seconds=0.5, corner_radius=0.3)
    values.update(kwargs)
    return TrajectoryConfig(**values)


def copy_dataset(dataset):
    """ deep enough copy for tests that edit the streams """
    truth = dataset.truth.copy() if dataset.truth is not None else None
    return replace(dataset, imu=dataset.imu.copy(), mag=dataset.mag.copy(),
                   truth=truth, meta=dict(dataset.meta))


@pytest.fixture(scope="session")
def rect_geometry():
    return load_geometry(GEOMETRY_DIR / "rectangular_30.txt")


@pytest.fixture(scope="session")
def square_geometry():
    return load_geometry(GEOMETRY_DIR / "square_5.txt")


@pytest.fixture(scope="session")
def loop_script():
    return build_script(short_loop())


@pytest.fixture(scope="session")
def static_script():
    return build_script(TrajectoryConfig(kind="static", rest_seconds=2.0))


@pytest.fixture(scope="session")
def dipole_world(loop_script, square_geometry):
    return make_world(WorldConfig(n_dipoles=4, margin=1.0), loop_script, square_geometry, seed=3)


@pytest.fixture(scope="session")
def uniform_world(static_script, rect_geometry):
    return make_world(WorldConfig(n_dipoles=0, target_variation=None), static_script, rect_geometry)


@pytest.fixture(scope="session")
def loop_dataset(dipole_world, loop_script, square_geometry):
    """ noisy IMU and array recording of the short loop, seed 0 """
    return synthesize(dipole_world, loop_script, square_geometry, SensorConfig(), seed=0, name="loop")


@pytest.fixture(scope="session")
def quiet_loop_dataset(dipole_world, loop_script, square_geometry):
    return synthesize(dipole_world, loop_script, square_geometry, QUIET_SENSORS, seed=0, name="quiet_loop")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def loop_config():
    """ factory for short-loop trajectory configurations """
    return short_loop


@pytest.fixture(scope="session")
def quiet_sensors():
    return QUIET_SENSORS


@pytest.fixture(scope="session")
def dataset_copy():
    return copy_dataset
