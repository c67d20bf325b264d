"""Episode environment: observations, rewards, detection, termination."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import EnvParams
from .hopper import (
    STANCE, Action, AgentState, foot_position, standing_state, step_dynamics,
)
from .terrain import GAP_DEPTH, ArtifactSpec, TerrainProfile

HEIGHTMAP_SAMPLES = 60
HEIGHTMAP_GRID = 0.025
HEIGHTMAP_BEHIND = 0.6
HEIGHTMAP_AHEAD = 0.9
HEIGHTMAP_DEPTH = 2.0
ROBOT_FEATURES = 10
OBS_DIM = ROBOT_FEATURES + HEIGHTMAP_SAMPLES

DETECTION_RANGE = 0.9


class RunningStats:
    """Welford running mean/std over robot-state features."""

    def __init__(self, dim: int = ROBOT_FEATURES):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, vec: np.ndarray) -> None:
        self.count += 1
        delta = vec - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (vec - self.mean)

    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones_like(self.mean)
        return np.sqrt(np.maximum(self.m2 / self.count, 1e-12))

    def normalize(self, vec: np.ndarray) -> np.ndarray:
        if self.count < 2:
            return vec.copy()
        return (vec - self.mean) / self.std()

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean.tolist(),
                "m2": self.m2.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "RunningStats":
        out = cls(len(data["mean"]))
        out.count = data["count"]
        out.mean = np.asarray(data["mean"], dtype=float)
        out.m2 = np.asarray(data["m2"], dtype=float)
        return out


@dataclass
class Observation:
    robot_vec: np.ndarray
    heightmap: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.robot_vec, self.heightmap])


@dataclass
class StepResult:
    obs: Observation
    reward: float
    done: bool
    fall: bool
    distance_frac: float
    info: dict = field(default_factory=dict)


def heightmap_at(state: AgentState, profile: TerrainProfile) -> np.ndarray:
    """Body-anchored 1-D depth slice: 0 at CoM height, 1 at 2 m below."""
    out = np.empty(HEIGHTMAP_SAMPLES)
    z = state.z
    x0 = state.x - HEIGHTMAP_BEHIND
    for i in range(HEIGHTMAP_SAMPLES):
        h = profile.height_clamped(x0 + i * HEIGHTMAP_GRID)
        if h == GAP_DEPTH:
            out[i] = 1.0
        else:
            out[i] = min(max((z - h) / HEIGHTMAP_DEPTH, 0.0), 1.0)
    return out


def robot_features(state: AgentState, profile: TerrainProfile,
                   params: EnvParams) -> np.ndarray:
    h = profile.height_clamped(state.x)
    clearance = HEIGHTMAP_DEPTH if h == GAP_DEPTH else \
        min(state.z - h, HEIGHTMAP_DEPTH)
    in_stance = 1.0 if state.phase == STANCE else 0.0
    recent_contact = in_stance or (state.time_in_phase < 1.5 * params.dt)
    return np.array([
        clearance,
        state.vx,
        state.vz,
        state.leg_angle,
        state.leg_len,
        1.0 - in_stance,
        in_stance,
        min(state.time_in_phase, 2.0),
        1.0 if recent_contact else 0.0,
        state.leg_angle_rate,
    ])


def observe(state: AgentState, profile: TerrainProfile,
            norm_stats: RunningStats, params: EnvParams,
            heightmap: np.ndarray | None = None) -> Observation:
    """Normalized robot features plus (cached or fresh) heightmap slice."""
    raw = robot_features(state, profile, params)
    if not np.all(np.isfinite(norm_stats.mean)):
        raise ValueError("normalization stats must be finite")
    vec = norm_stats.normalize(raw)
    if heightmap is None:
        heightmap = heightmap_at(state, profile)
    return Observation(vec, heightmap)


def detect_next_artifact(
    state: AgentState, profile: TerrainProfile,
    detection_range: float = DETECTION_RANGE,
) -> tuple[str, float] | None:
    """Oracle detector: next obstacle kind and distance, within range only."""
    art = profile.next_obstacle(state.x)
    if art is None:
        return None
    distance = art.start_x - state.x
    if distance <= detection_range + 1e-12:
        return art.kind, distance
    return None


def action_to_physical(a: np.ndarray, params: EnvParams) -> Action:
    """Map a normalized action in [-1, 1]^3 onto the physical ranges."""
    a0 = min(max(float(a[0]), -1.0), 1.0)
    a1 = min(max(float(a[1]), -1.0), 1.0)
    a2 = min(max(float(a[2]), -1.0), 1.0)
    return Action(
        leg_angle_cmd=a0 * params.max_leg_angle,
        thrust=(a1 + 1.0) * 0.5 * params.max_thrust,
        damping=(a2 + 1.0) * 0.5,
    )


def physical_to_normalized(act: Action, params: EnvParams) -> np.ndarray:
    return np.array([
        act.leg_angle_cmd / params.max_leg_angle,
        act.thrust / params.max_thrust * 2.0 - 1.0,
        act.damping * 2.0 - 1.0,
    ])


class HopperEnv:
    """One episode over one terrain profile at 120 Hz control, 20 Hz perception."""

    def __init__(self, profile: TerrainProfile, params: EnvParams,
                 norm_stats: RunningStats | None = None,
                 start_x: float = 0.5, time_limit: float | None = None,
                 pause: bool = True):
        self.profile = profile
        self.params = params
        self.norm_stats = norm_stats if norm_stats is not None else RunningStats()
        self.start_x = start_x
        self.time_limit = time_limit if time_limit is not None \
            else params.episode_time_limit
        self.pause = pause
        self.finish_x = profile.total_length - 0.3
        self.reset()

    def reset(self, state: AgentState | None = None) -> Observation:
        if state is None:
            ground = self.profile.height_clamped(self.start_x)
            state = standing_state(self.params, x=self.start_x, ground=ground)
        self.state = state
        self.max_x = state.x
        self.steps = 0
        self._heightmap = heightmap_at(state, self.profile)
        self.done = False
        self.success = False
        return self.observation()

    def observation(self, update_stats: bool = False) -> Observation:
        raw = robot_features(self.state, self.profile, self.params)
        if update_stats:
            self.norm_stats.update(raw)
        vec = self.norm_stats.normalize(raw)
        return Observation(vec, self._heightmap)

    def distance_frac(self) -> float:
        if self.success:
            return 1.0
        return min(max(self.max_x / self.profile.total_length, 0.0), 1.0)

    def in_pause(self) -> bool:
        return self.pause and self.state.sim_time < self.params.pause_duration

    def step(self, action: Action, ext_force: tuple[float, float] = (0.0, 0.0),
             update_stats: bool = False) -> StepResult:
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        p = self.params
        prev_max = self.max_x
        paused = self.in_pause()
        self.state = step_dynamics(self.state, action, self.profile, p,
                                   ext_force)
        self.steps += 1
        self.max_x = max(self.max_x, self.state.x)
        if self.steps % p.perception_every == 0:
            self._heightmap = heightmap_at(self.state, self.profile)

        fall = self.state.fallen
        timeout = self.state.sim_time >= self.time_limit
        self.success = (not fall) and self.max_x >= self.finish_x
        self.done = fall or timeout or self.success

        a_norm = physical_to_normalized(action, p)
        reward = p.alive_bonus
        reward -= p.action_cost * float(np.dot(a_norm, a_norm))
        if paused:
            reward -= p.pause_motion_cost * abs(self.state.vx)
        else:
            reward += p.progress_weight * (self.max_x - prev_max)
        if fall:
            reward -= 1.0

        obs = self.observation(update_stats=update_stats)
        return StepResult(obs, reward, self.done, fall, self.distance_frac(),
                          {"success": self.success, "timeout": timeout})

    def active_obstacle(self, margin: float = DETECTION_RANGE) -> ArtifactSpec | None:
        return self.profile.obstacle_near(self.state.x, margin)


def random_start_state(params: EnvParams, rng: np.random.Generator,
                       start_x: float, ground: float,
                       vx_range: tuple[float, float],
                       angle_range: tuple[float, float],
                       height_range: tuple[float, float]) -> AgentState:
    """Randomized airborne start used by the no-overlap training ablation."""
    state = standing_state(params, x=start_x, ground=ground)
    state.phase = 0  # flight
    state.leg_len = params.rest_length
    state.vx = float(rng.uniform(*vx_range))
    state.vz = float(rng.uniform(-0.5, 0.5))
    state.leg_angle = float(rng.uniform(*angle_range))
    state.z = ground + params.rest_length + 0.02 + float(rng.uniform(*height_range))
    state.foot_x = state.x + params.rest_length * math.sin(state.leg_angle)
    return state
