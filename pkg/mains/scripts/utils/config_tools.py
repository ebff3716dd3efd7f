"""
Here are the run and scenario configurations of the pipeline, read from YAML
files into dataclasses. Any key that is not listed below is rejected.

Run file sections:      model, noise, init, filter, gravity, alignment_tolerance
Scenario file sections: name, preset, seed, geometry, trajectory, world, sensors
"""

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml
# custom fxs
from scripts.utils.errors import ConfigError
from scripts.utils.logging_tools import logging_setup

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"
GEOMETRY_DIR = CONFIG_DIR / "geometry"


# ----- RUN CONFIGURATION ----------------------------------------------------#
@dataclass
class ModelConfig:
    order: int = 1
    anchors: str = "all"            # "all" magnetometers or the "minimal" ceil(kappa/3) subset
    max_condition: float = 1e6


@dataclass
class NoiseConfig:
    accel_density: float = 1e-2     # m/s^2/sqrt(Hz)
    gyro_density: float = 1e-3      # rad/s/sqrt(Hz)
    accel_bias_rw: float = 1e-4     # m/s^2/sqrt(s)
    gyro_bias_rw: float = 1e-4      # rad/s/sqrt(s)
    theta_std: float = 0.05         # uT per step
    mag_std: float = 0.05           # uT, used when adaptive_r is off
    sigma_floor: float = 0.01       # uT
    adaptive_r: bool = True
    gate_sigma: float = None        # innovation gate per magnetometer triple, None = off
    position_std: float = 0.01      # m, aiding-window position measurements

    def imu_blocks(self, Ts: float):
        """
        Covariance blocks (Sigma_a, Sigma_w, Sigma_oa, Sigma_ow) for one step.
        White-noise densities become per-sample variances (density^2 / Ts);
        random walks stay as densities, G scales them with sqrt(Ts).
        """
        eye = np.eye(3)
        return (self.accel_density ** 2 / Ts * eye,
                self.gyro_density ** 2 / Ts * eye,
                self.accel_bias_rw ** 2 * eye,
                self.gyro_bias_rw ** 2 * eye)

    def process_covariance(self, Ts: float, kappa: int):
        """ Q = blkdiag(Sigma_a, Sigma_w, Sigma_oa, Sigma_ow, Sigma_theta) """
        blocks = list(self.imu_blocks(Ts))
        blocks.append(self.theta_std ** 2 * np.eye(kappa))
        size = 12 + kappa
        Q = np.zeros((size, size))
        start = 0
        for block in blocks:
            n = block.shape[0]
            Q[start:start + n, start:start + n] = block
            start += n
        return Q


@dataclass
class InitConfig:
    p0_position: float = 1e-4       # m^2
    p0_velocity: float = 1e-4       # (m/s)^2
    p0_attitude: float = 1e-4       # rad^2
    p0_bias: float = 1e-4
    p0_theta: float = 1e2           # uT^2 per coefficient

    def covariance(self, kappa: int):
        """ diagonal P0 in the (dp, dv, eps, doa, dow, dtheta) order """
        diag = np.concatenate([
            np.full(3, self.p0_position),
            np.full(3, self.p0_velocity),
            np.full(3, self.p0_attitude),
            np.full(6, self.p0_bias),
            np.full(kappa, self.p0_theta)])
        return np.diag(diag)


@dataclass
class FilterConfig:
    aiding_seconds: float = 60.0
    use_mag: bool = True
    jacobians: str = "compact"      # "compact" drops O(Ts^2) terms and J_r, "full" = complete first order
    joseph: bool = False
    psd_check_every: int = 0        # 0 = off
    progress_every: int = 2000


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    init: InitConfig = field(default_factory=InitConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    gravity: tuple = (0.0, 0.0, -9.81)   # ENU navigation frame
    alignment_tolerance: float = 0.005   # s, IMU/magnetometer association

    @property
    def g(self):
        return np.asarray(self.gravity, dtype=float)


# ----- SCENARIO CONFIGURATION -----------------------------------------------#
@dataclass
class TrajectoryConfig:
    kind: str = "square"            # "square", "waypoints" or "static"
    side: float = 4.0               # m
    laps: float = 7.0
    speed: float = 1.0              # m/s
    height: float = 0.8             # m
    tilt: float = 0.0               # rad, board roll
    rest_seconds: float = 5.0
    ramp_seconds: float = 2.0
    final_rest_seconds: float = 1.0
    corner_radius: float = 0.5      # m, square corners are rounded
    waypoints: list = None          # [[x, y], ...] closed loop, used when kind == "waypoints"


@dataclass
class WorldConfig:
    background: tuple = (15.0, 0.0, -40.0)  # uT
    n_dipoles: int = 12
    depth: tuple = (0.6, 1.5)               # m below the floor
    margin: float = 2.0                     # m around the trajectory footprint
    keepout: float = 0.5                    # m
    target_variation: float = 8.0           # uT peak-to-peak magnitude along the trajectory, None = raw
    gradient: list = None                   # 3x3 symmetric traceless, uT/m


@dataclass
class SensorConfig:
    imu_rate: float = 100.0                 # Hz
    mag_rate: float = 100.0                 # Hz
    accel_density: float = 1e-2
    gyro_density: float = 1e-3
    accel_bias: tuple = (0.01, -0.008, 0.005)
    gyro_bias: tuple = (1e-3, -5e-4, 8e-4)
    accel_bias_rw: float = 1e-4
    gyro_bias_rw: float = 1e-4
    mag_std: float = 0.05                   # uT per axis


# board heights/tilts of the recorded dataset families
PRESETS = {
    "LP": {"height": 0.5, "tilt": 0.0},
    "NP": {"height": 0.8, "tilt": 0.0},
    "NT": {"height": 0.75, "tilt": 0.3},
}


@dataclass
class ScenarioConfig:
    name: str = "default"
    preset: str = None
    seed: int = 0
    geometry: str = "rectangular_30"
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    sensors: SensorConfig = field(default_factory=SensorConfig)


# ----- LOADING --------------------------------------------------------------#
def _build(cls, values: dict, where: str):
    """ instantiate dataclass cls from a dict, rejecting unknown keys """
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"section '{where}' must be a mapping, got {type(values).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in section '{where}'")
    kwargs = {}
    for name, value in values.items():
        sub = SECTION_TYPES.get((cls, name))
        if sub:
            value = _build(sub, value, f"{where}.{name}")
        elif isinstance(known[name].default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


SECTION_TYPES = {
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "noise"): NoiseConfig,
    (RunConfig, "init"): InitConfig,
    (RunConfig, "filter"): FilterConfig,
    (ScenarioConfig, "trajectory"): TrajectoryConfig,
    (ScenarioConfig, "world"): WorldConfig,
    (ScenarioConfig, "sensors"): SensorConfig,
}


def _read_yaml(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file not found: {path}")
    with open(path, "r") as f:
        try:
            values = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"malformed YAML in {path}: {e}") from e
    return values or {}


def validate_run_config(cfg: RunConfig):
    """ raises ConfigError on values outside their documented ranges """
    if int(cfg.model.order) < 1:
        raise ConfigError(f"model.order must be >= 1, got {cfg.model.order}")
    if cfg.model.anchors not in ("all", "minimal"):
        raise ConfigError(f"model.anchors must be 'all' or 'minimal', got {cfg.model.anchors!r}")
    if cfg.filter.jacobians not in ("compact", "full"):
        raise ConfigError(f"filter.jacobians must be 'compact' or 'full', got {cfg.filter.jacobians!r}")
    if cfg.filter.aiding_seconds < 0:
        raise ConfigError("filter.aiding_seconds must be non-negative")
    if len(cfg.gravity) != 3:
        raise ConfigError(f"gravity must have 3 components, got {cfg.gravity}")
    for name in ("accel_density", "gyro_density", "accel_bias_rw", "gyro_bias_rw",
                 "theta_std", "mag_std", "sigma_floor", "position_std"):
        if getattr(cfg.noise, name) < 0:
            raise ConfigError(f"noise.{name} must be non-negative")
    return cfg


def load_run_config(path=None, **overrides) -> RunConfig:
    """
    Read a run configuration file (or the defaults when path is None) and
    apply CLI overrides given as dotted keys, e.g. {"filter.use_mag": False}.
    """
    logger = logging_setup()
    values = _read_yaml(path) if path is not None else {}
    cfg = _build(RunConfig, values, "run")
    cfg = apply_overrides(cfg, overrides)
    if path is not None:
        logger.info(f"loaded run configuration from {path}")
    return validate_run_config(cfg)


def apply_overrides(cfg, overrides: dict):
    """ returns a copy of cfg with dotted-key overrides applied (None values skipped) """
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        key = key.replace("__", ".")
        section, _, name = key.rpartition(".")
        if section:
            sub = getattr(cfg, section, None)
            if sub is None or name not in {f.name for f in fields(sub)}:
                raise ConfigError(f"unknown override key '{key}'")
            cfg = replace(cfg, **{section: replace(sub, **{name: value})})
        else:
            if name not in {f.name for f in fields(cfg)}:
                raise ConfigError(f"unknown override key '{key}'")
            cfg = replace(cfg, **{name: value})
    return cfg


def load_scenario_config(path=None, **overrides) -> ScenarioConfig:
    """ Read a scenario file; a 'preset' (LP, NP, NT) fills height and tilt. """
    values = _read_yaml(path) if path is not None else {}
    cfg = _build(ScenarioConfig, values, "scenario")
    if cfg.preset is not None:
        if cfg.preset not in PRESETS:
            raise ConfigError(f"unknown preset {cfg.preset!r}, expected one of {sorted(PRESETS)}")
        # explicit trajectory keys in the file win over the preset
        explicit = (values.get("trajectory") or {}).keys()
        preset = {k: v for k, v in PRESETS[cfg.preset].items() if k not in explicit}
        cfg = replace(cfg, trajectory=replace(cfg.trajectory, **preset))
    return apply_overrides(cfg, overrides)


def geometry_path(name_or_path) -> Path:
    """ resolves a shipped geometry name (e.g. 'square_5') or returns the given path """
    path = Path(name_or_path)
    if path.suffix:
        return path
    return GEOMETRY_DIR / f"{name_or_path}.txt"


def _plain(value):
    """ tuples -> lists, numpy scalars -> python, recursively (safe_dump friendly) """
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    return _plain(asdict(cfg))


def scenario_from_dict(values: dict) -> ScenarioConfig:
    """ inverse of scenario_to_dict; presets are not re-applied """
    return _build(ScenarioConfig, values, "scenario")
