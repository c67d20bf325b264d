"""Experiment configuration: every tunable lives here, serializable to JSON."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Any

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for malformed or schema-incompatible config files."""


@dataclass
class EnvParams:
    # Hopper body
    mass: float = 10.0              # kg
    rest_length: float = 0.6        # m, leg spring rest length
    spring_k: float = 2400.0        # N/m
    gravity: float = 9.81
    dt: float = 1.0 / 120.0         # control + integration step
    perception_hz: float = 20.0     # heightmap refresh rate
    max_thrust: float = 500.0       # N, extra leg force while in stance
    max_damping: float = 90.0       # N.s/m, leg damper at damping_cmd = 1
    leg_servo_tau: float = 0.04     # s, flight-phase leg angle tracking constant
    max_leg_angle: float = 0.7      # rad, bound on command and on fall check
    fall_height_margin: float = 0.12   # CoM below terrain + margin => fall
    episode_time_limit: float = 30.0   # s
    pause_duration: float = 0.5     # s of stillness required at episode start
    pause_speed_tol: float = 0.15   # m/s, stillness threshold during the pause
    # Reward coefficients
    progress_weight: float = 1.0    # per metre of forward progress
    alive_bonus: float = 0.002      # per control step
    action_cost: float = 0.0015     # per control step, on squared normalized action
    pause_motion_cost: float = 0.02  # per control step, on |vx| during the pause

    @property
    def perception_every(self) -> int:
        return max(1, round(1.0 / (self.perception_hz * self.dt)))


@dataclass
class TerrainParams:
    # Difficulty-0 -> difficulty-1 endpoints (linear interpolation)
    gap_length: tuple[float, float] = (0.10, 0.70)
    hurdle_height: tuple[float, float] = (0.04, 0.22)
    hurdle_width: float = 0.06
    stair_rise: tuple[float, float] = (0.017, 0.17)
    stair_steps: int = 3            # risers up, then the same number down
    step_height: tuple[float, float] = (0.05, 0.30)
    step_length: float = 0.16
    # Flat filler boxes
    flat_box: tuple[float, float] = (0.36, 0.44)
    min_flat_before: float = 0.9    # guaranteed flat run before each artifact
    lead_in: float = 2.0            # flat before the first artifact
    tail: float = 1.5               # flat after the last artifact


@dataclass
class NetParams:
    hidden: tuple[int, ...] = (64, 64)
    init_seed: int = 0


@dataclass
class PpoParams:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch: int = 256
    horizon: int = 4096
    lr: float = 3e-4
    entropy_coef: float = 0.0
    vf_coef: float = 0.5
    log_std_init: float = -0.7
    hidden: tuple[int, ...] = (64, 64)
    action_repeat: int = 6   # control steps each policy decision is held for


@dataclass
class ReferenceGaitParams:
    # Raibert-style scripted gait: foot placement from speed error, thrust
    # from apex error.
    v_ref: float = 0.9              # m/s target forward speed
    apex_ref: float = 0.72          # m target hop apex (CoM, above local terrain)
    k_speed: float = 0.10           # rad per m/s of speed error
    k_apex: float = 2600.0          # N per metre of apex error
    placement_time: float = 0.18    # s, effective stance period for neutral point
    damping_cmd: float = 0.2        # baseline damping command
    stance_angle_gain: float = 0.0  # leg angle command held neutral in stance


@dataclass
class CurriculumParams:
    terrain_levels: int = 10
    guide_levels: int = 10
    perturb_levels: int = 5
    consecutive_successes: int = 3
    milestone_mode: str = "consecutive"   # or "reward"
    reward_threshold: float = 8.0         # only used in reward mode
    stall_episodes: int = 200     # report a stall after this many at one level
    max_episodes: int = 1500      # hard training budget
    max_updates: int = 800
    guide_k_vx: float = 140.0     # N per m/s, CoM stabilizer
    guide_k_z: float = 2500.0     # N per m, CoM stabilizer
    guide_c_z: float = 220.0      # N.s/m, CoM stabilizer vertical damping
    guide_z_offset: float = 0.22  # stabilizer height setpoint above rest length
    perturb_base: float = 0.5     # N.s
    perturb_max: float = 5.0      # N.s
    perturb_interval: float = 2.0  # s, mean Poisson interval
    train_artifacts: int = 3      # artifacts per training episode
    overlap: bool = True          # standing start + pause (RoA overlap mode)
    random_start_vx: tuple[float, float] = (0.0, 2.4)
    random_start_angle: tuple[float, float] = (-0.5, 0.5)
    random_start_height: tuple[float, float] = (0.0, 0.25)
    gait: ReferenceGaitParams = field(default_factory=ReferenceGaitParams)


@dataclass
class EstimatorParams:
    n_samples: int = 20000        # 5 points each -> 100000 data points
    epochs: int = 1500
    lr: float = 1e-3
    batch: int = 256
    hidden: tuple[int, ...] = (64, 64)
    val_frac: float = 0.1
    threshold: float = 0.85
    force_switch_distance: float = 0.01   # m
    detection_range: float = 0.9          # m
    stable_steps: int = 2                 # hop cycles past the artifact for label 1
    calibration_bins: int = 10
    collect_lead_in: tuple[float, float] = (1.3, 1.9)  # flat run before artifact
    sources: tuple[str, ...] = ()   # empty = all registered kinds except target


@dataclass
class SetupParams:
    alpha: float = 0.15           # advantage-squared clamp scale
    beta: float = 0.01            # target-value reward scale
    delta: float = 0.95           # proximity-predictor decay
    constant_reward: float = 1.5
    torque_match_coef: float = 2.0
    buffer_size: int = 512
    updates: int = 60
    lr: float = 3e-4
    tau_threshold: float = 0.5
    advantage_smoothing: int = 1  # TD-residual window; 1 = instantaneous
    proximity_threshold: float = 0.9
    proximity_hidden: tuple[int, ...] = (64, 64)
    proximity_epochs: int = 40
    proximity_lr: float = 1e-3


@dataclass
class SelectorParams:
    lr: float = 1e-3
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_final: float = 0.05
    epsilon_decay_steps: int = 20000
    replay_size: int = 30000
    batch: int = 64
    target_update: int = 500
    decision_every: int = 6       # control steps between selector decisions
    oracle_bonus: float = 0.05
    episodes: int = 300
    hidden: tuple[int, ...] = (64, 64)


@dataclass
class EvalParams:
    trials: int = 500
    artifacts: int = 7
    time_limit: float = 45.0


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    workers: int = 1
    kinds: tuple[str, ...] = ("flat", "gap", "hurdle", "step")
    output_dir: str = ""
    env: EnvParams = field(default_factory=EnvParams)
    terrain: TerrainParams = field(default_factory=TerrainParams)
    ppo: PpoParams = field(default_factory=PpoParams)
    curriculum: CurriculumParams = field(default_factory=CurriculumParams)
    estimator: EstimatorParams = field(default_factory=EstimatorParams)
    setup: SetupParams = field(default_factory=SetupParams)
    selector: SelectorParams = field(default_factory=SelectorParams)
    evaluation: EvalParams = field(default_factory=EvalParams)

    def resolved_output_dir(self) -> str:
        if self.output_dir:
            return self.output_dir
        return os.environ.get("HOPRL_RUNS", "runs")


_NESTED = {
    "env": EnvParams,
    "terrain": TerrainParams,
    "ppo": PpoParams,
    "curriculum": CurriculumParams,
    "estimator": EstimatorParams,
    "setup": SetupParams,
    "selector": SelectorParams,
    "evaluation": EvalParams,
}


def _build(cls, data: dict[str, Any]):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {cls.__name__}.{key}")
        ftype = fields[key].type
        if isinstance(value, dict) and key in _NESTED:
            value = _build(_NESTED[key], value)
        elif isinstance(value, dict) and key == "gait":
            value = _build(ReferenceGaitParams, value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
        del ftype
    return cls(**kwargs)


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    return dataclasses.asdict(cfg)


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    version = data.get("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"config schema_version {version!r} does not match supported "
            f"version {SCHEMA_VERSION}"
        )
    return _build(ExperimentConfig, data)


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config_from_dict(data)
