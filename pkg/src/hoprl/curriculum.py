"""Three-stage curriculum: terrain ramp under guide forces, guide annealing,
perturbation ramp; plus the scripted reference gait used as the guide."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import CurriculumParams, EnvParams, ExperimentConfig, \
    ReferenceGaitParams
from .env import HopperEnv, action_to_physical
from .hopper import FLIGHT, Action, AgentState
from .terrain import GAP_DEPTH, TerrainProfile

TERRAIN = "terrain"
GUIDE = "guide"
PERTURB = "perturb"
DONE = "done"

_STAGE_ORDER = (TERRAIN, GUIDE, PERTURB, DONE)
KINDS_SUPPORTED = ("flat", "gap", "hurdle", "stairs", "step")


@dataclass
class CurriculumState:
    stage: str = TERRAIN
    level: int = 0
    consecutive_successes: int = 0
    episodes_at_level: int = 0
    stalled: bool = False


def _stage_levels(stage: str, cfg: CurriculumParams) -> int:
    return {TERRAIN: cfg.terrain_levels, GUIDE: cfg.guide_levels,
            PERTURB: cfg.perturb_levels}.get(stage, 0)


def schedule(cur: CurriculumState, cfg: CurriculumParams
             ) -> tuple[float, float, float]:
    """(terrain_difficulty, guide_gain, perturb_mag) for the current level."""
    if cur.stage == TERRAIN:
        frac = cur.level / cfg.terrain_levels
        return frac, 1.0, cfg.perturb_base
    if cur.stage == GUIDE:
        frac = cur.level / cfg.guide_levels
        return 1.0, 1.0 - frac, cfg.perturb_base
    if cur.stage == PERTURB:
        frac = cur.level / cfg.perturb_levels
        return 1.0, 0.0, cfg.perturb_base + frac * (cfg.perturb_max -
                                                    cfg.perturb_base)
    return 1.0, 0.0, cfg.perturb_max


def milestone_update(cur: CurriculumState, episode_success: bool,
                     cfg: CurriculumParams) -> CurriculumState:
    """Advance level after the required consecutive successes; stage on exhaust."""
    if cur.stage == DONE:
        raise ValueError("curriculum already finished")
    out = CurriculumState(cur.stage, cur.level, cur.consecutive_successes,
                          cur.episodes_at_level + 1, cur.stalled)
    if episode_success:
        out.consecutive_successes += 1
    else:
        out.consecutive_successes = 0
    if out.consecutive_successes >= cfg.consecutive_successes:
        out.level += 1
        out.consecutive_successes = 0
        out.episodes_at_level = 0
        out.stalled = False
        if out.level >= _stage_levels(out.stage, cfg):
            out.stage = _STAGE_ORDER[_STAGE_ORDER.index(out.stage) + 1]
            out.level = 0
    elif out.episodes_at_level >= cfg.stall_episodes:
        out.stalled = True
    return out


class ReferenceGait:
    """Scripted hop cycle: speed-servoed foot placement, apex-servoed thrust.

    Good enough to cross flat ground indefinitely; it is a guide, not a
    terrain specialist.
    """

    def __init__(self, gait: ReferenceGaitParams, env_params: EnvParams):
        self.gait = gait
        self.p = env_params

    def action(self, state: AgentState, profile: TerrainProfile,
               pausing: bool = False) -> Action:
        g = self.gait
        p = self.p
        if pausing:
            return Action(0.0, 0.0, 0.6)
        if state.phase == FLIGHT:
            neutral = state.vx * g.placement_time / (2.0 * p.rest_length)
            neutral = min(max(neutral, -0.95), 0.95)
            angle = math.asin(neutral) + g.k_speed * (state.vx - g.v_ref)
            angle = min(max(angle, -p.max_leg_angle), p.max_leg_angle)
            return Action(angle, 0.0, 0.0)
        ground = profile.height_clamped(state.foot_x)
        if ground == GAP_DEPTH:
            ground = profile.gap_floor_reference(state.foot_x)
        if state.vz >= -0.02:  # upstroke, or resting ready to launch
            apex_pred = state.z + state.vz * state.vz / (2.0 * p.gravity)
            deficit = (ground + g.apex_ref) - apex_pred
            thrust = min(max(g.k_apex * deficit, 0.0), p.max_thrust)
        else:
            thrust = 0.0
        return Action(0.0, thrust, g.damping_cmd)


def guided_action(policy_action: Action, reference_action: Action,
                  guide_gain: float) -> Action:
    """Convex blend of the policy action with the reference gait action."""
    if not 0.0 <= guide_gain <= 1.0:
        raise ValueError("guide_gain must lie in [0, 1]")
    w = guide_gain
    return Action(
        leg_angle_cmd=(1 - w) * policy_action.leg_angle_cmd
        + w * reference_action.leg_angle_cmd,
        thrust=(1 - w) * policy_action.thrust + w * reference_action.thrust,
        damping=(1 - w) * policy_action.damping + w * reference_action.damping,
    )


def stabilizer_force(state: AgentState, profile: TerrainProfile,
                     guide_gain: float, cfg: CurriculumParams,
                     env_params: EnvParams,
                     pausing: bool = False) -> tuple[float, float]:
    """External CoM force tracking the reference speed and ride height."""
    if guide_gain <= 0.0:
        return (0.0, 0.0)
    ground = profile.height_clamped(state.x)
    if ground == GAP_DEPTH:
        ground = profile.gap_floor_reference(state.x)
    if pausing:
        v_target = 0.0
        z_ref = ground + env_params.rest_length \
            - env_params.mass * env_params.gravity / env_params.spring_k
    else:
        v_target = cfg.gait.v_ref
        z_ref = ground + env_params.rest_length + cfg.guide_z_offset
    fx = guide_gain * cfg.guide_k_vx * (v_target - state.vx)
    fz = guide_gain * (cfg.guide_k_z * (z_ref - state.z)
                       - cfg.guide_c_z * state.vz)
    return (fx, fz)


class PerturbationSchedule:
    """Poisson-timed velocity impulses of random magnitude and sign."""

    def __init__(self, rng: np.random.Generator, mean_interval: float):
        self.rng = rng
        self.mean_interval = mean_interval
        self.next_time = self._draw_interval()

    def _draw_interval(self) -> float:
        return float(self.rng.exponential(self.mean_interval))

    def maybe_perturb(self, state: AgentState, perturb_mag: float,
                      mass: float) -> AgentState:
        if state.sim_time < self.next_time:
            return state
        self.next_time = state.sim_time + self._draw_interval()
        return perturb(state, self.rng, perturb_mag, mass)


def perturb(state: AgentState, rng: np.random.Generator, perturb_mag: float,
            mass: float) -> AgentState:
    """Apply one impulse (N.s) with random sign per velocity component."""
    impulse = float(rng.uniform(0.0, perturb_mag))
    sx = 1.0 if rng.integers(2) else -1.0
    sz = 1.0 if rng.integers(2) else -1.0
    out = state.copy()
    out.vx += sx * impulse / mass
    out.vz += sz * impulse / mass
    return out


@dataclass
class TrainResult:
    kind: str
    policy: "GaussianPolicy"
    value_net: "ValueNet"
    norm_stats: "RunningStats"
    curriculum: CurriculumState
    log: list = field(default_factory=list)
    episodes: int = 0
    updates: int = 0
    stalls: int = 0


def _episode_profile(rng: np.random.Generator, kind: str, difficulty: float,
                     cfg: ExperimentConfig) -> TerrainProfile:
    from .terrain import generate_uniform_sequence
    return generate_uniform_sequence(rng, cfg.curriculum.train_artifacts,
                                     kind, difficulty, cfg.terrain)


def run_training_episode(env: HopperEnv, policy, value_net, buffer, gait,
                         profile, guide_gain, perturber, perturb_mag,
                         cfg: ExperimentConfig, rng, trainer,
                         update_hook=None) -> dict:
    """One on-policy episode with guide blending; updates fire on full buffer."""
    from .ppo import ppo_update

    vec = env.observation(update_stats=True).vector()
    n_updates = 0
    repeat = max(1, cfg.ppo.action_repeat)
    while not env.done:
        a_raw, logp = policy.sample(vec, rng)
        value = value_net.value(vec)
        pol_act = action_to_physical(a_raw, cfg.env)
        reward = 0.0
        result = None
        for _ in range(repeat):
            pausing = env.in_pause()
            ref_act = gait.action(env.state, profile, pausing=pausing)
            act = guided_action(pol_act, ref_act, guide_gain)
            force = stabilizer_force(env.state, profile, guide_gain,
                                     cfg.curriculum, cfg.env, pausing=pausing)
            result = env.step(act, ext_force=force, update_stats=True)
            reward += result.reward
            if env.done:
                break
            if perturber is not None and perturb_mag > 0.0:
                env.state = perturber.maybe_perturb(env.state, perturb_mag,
                                                    cfg.env.mass)
        buffer.add(vec, a_raw, logp, reward, value, result.done)
        vec = result.obs.vector()
        if buffer.size >= buffer.capacity:
            bootstrap = 0.0 if result.done else value_net.value(vec)
            buffer.finalize(cfg.ppo.gamma, cfg.ppo.lam, bootstrap)
            stats = ppo_update(policy, value_net, buffer, cfg.ppo, trainer,
                               rng)
            buffer.clear()
            n_updates += 1
            if update_hook:
                update_hook(stats)
    return {"success": env.success, "distance_frac": env.distance_frac(),
            "sim_time": env.state.sim_time, "updates": n_updates}


def train_terrain_policy(kind: str, cfg: ExperimentConfig, seed: int,
                         guide_disabled: bool = False,
                         overlap: bool | None = None,
                         log_path: str | None = None) -> TrainResult:
    """Three-stage curriculum PPO on single-kind terrain.

    guide_disabled zeroes the guide for the ablation study; overlap=False
    randomizes episode start states instead of the standing pause.
    """
    from .env import OBS_DIM, RunningStats, random_start_state
    from .ppo import GaussianPolicy, RolloutBuffer, ValueNet, make_trainer

    if kind not in KINDS_SUPPORTED:
        raise ValueError(f"unsupported kind {kind!r}")
    if overlap is None:
        overlap = cfg.curriculum.overlap
    ccfg = cfg.curriculum
    rng = np.random.default_rng(seed)
    init_rng = np.random.default_rng(seed + 1_000_003)
    terrain_rng = np.random.default_rng(seed + 2_000_003)

    policy = GaussianPolicy(OBS_DIM, 3, cfg.ppo.hidden, cfg.ppo.log_std_init,
                            rng=init_rng)
    value_net = ValueNet(OBS_DIM, cfg.ppo.hidden, rng=init_rng)
    trainer = make_trainer(policy, value_net, cfg.ppo)
    norm_stats = RunningStats()
    gait = ReferenceGait(ccfg.gait, cfg.env)
    buffer = RolloutBuffer(OBS_DIM, 3, cfg.ppo.horizon)

    cur = CurriculumState()
    result = TrainResult(kind, policy, value_net, norm_stats, cur)
    while cur.stage != DONE and result.episodes < ccfg.max_episodes \
            and result.updates < ccfg.max_updates:
        difficulty, guide_gain, perturb_mag = schedule(cur, ccfg)
        if guide_disabled:
            guide_gain = 0.0
        profile = _episode_profile(terrain_rng, kind, difficulty, cfg)
        env = HopperEnv(profile, cfg.env, norm_stats=norm_stats,
                        pause=overlap)
        if not overlap:
            start = random_start_state(
                cfg.env, rng, 0.5, profile.height_clamped(0.5),
                ccfg.random_start_vx, ccfg.random_start_angle,
                ccfg.random_start_height)
            env.reset(start)
        perturber = PerturbationSchedule(rng, ccfg.perturb_interval) \
            if cur.stage == PERTURB else None
        ep = run_training_episode(env, policy, value_net, buffer, gait,
                                  profile, guide_gain, perturber, perturb_mag,
                                  cfg, rng, trainer)
        result.episodes += 1
        result.updates += ep["updates"]
        was_stalled = cur.stalled
        cur = milestone_update(cur, ep["success"], ccfg)
        if cur.stalled and not was_stalled:
            result.stalls += 1
        result.log.append({
            "episode": result.episodes, "stage": cur.stage,
            "level": cur.level, "guide_gain": round(guide_gain, 4),
            "difficulty": round(difficulty, 4),
            "perturb_mag": round(perturb_mag, 4),
            "success": int(ep["success"]),
            "distance_frac": round(ep["distance_frac"], 4),
            "stalled": int(cur.stalled),
        })
    result.curriculum = cur
    if log_path:
        write_curriculum_log(result.log, log_path)
    return result


def write_curriculum_log(rows: list, path: str) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "episode", "stage", "level", "guide_gain", "difficulty",
            "perturb_mag", "success", "distance_frac", "stalled"])
        writer.writeheader()
        writer.writerows(rows)


def evaluate_single_kind(policy, norm_stats, kind: str, difficulty: float,
                         cfg: ExperimentConfig, trials: int, seed: int,
                         n_artifacts: int | None = None) -> dict:
    """Deterministic-policy evaluation on single-kind terrain, no guide."""
    from .terrain import generate_uniform_sequence

    n_artifacts = n_artifacts or cfg.curriculum.train_artifacts
    successes = 0
    dist = 0.0
    for trial in range(trials):
        rng = np.random.default_rng(seed + 17 * trial)
        profile = generate_uniform_sequence(rng, n_artifacts, kind,
                                            difficulty, cfg.terrain)
        env = HopperEnv(profile, cfg.env, norm_stats=norm_stats,
                        pause=cfg.curriculum.overlap)
        vec = env.observation().vector()
        repeat = max(1, cfg.ppo.action_repeat)
        while not env.done:
            act = action_to_physical(policy.mean_action(vec), cfg.env)
            for _ in range(repeat):
                result = env.step(act)
                if env.done:
                    break
            vec = result.obs.vector()
        successes += int(env.success)
        dist += env.distance_frac()
    return {"success_rate": successes / trials,
            "mean_distance": dist / trials, "trials": trials}
