"""PPO for continuous control: diagonal-Gaussian policy, GAE, clipped update."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import PpoParams
from .nn import AdamState, DenseNet, adam_update

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
_LOG_2PI = math.log(2.0 * math.pi)


class GaussianPolicy:
    """Dense mean net plus learned per-dimension log standard deviations."""

    def __init__(self, obs_dim: int, act_dim: int, hidden=(64, 64),
                 log_std_init: float = -0.7,
                 rng: np.random.Generator | None = None):
        self.mean_net = DenseNet([obs_dim] + list(hidden) + [act_dim],
                                 "linear", rng)
        self.log_std = np.full(act_dim, float(log_std_init))
        self._clamp()

    @property
    def act_dim(self) -> int:
        return self.mean_net.layer_dims[-1]

    @property
    def obs_dim(self) -> int:
        return self.mean_net.layer_dims[0]

    def _clamp(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def clone(self) -> "GaussianPolicy":
        other = GaussianPolicy.__new__(GaussianPolicy)
        other.mean_net = self.mean_net.clone()
        other.log_std = self.log_std.copy()
        return other

    def parameters(self) -> list[np.ndarray]:
        return self.mean_net.parameters() + [self.log_std]

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        return self.mean_net.forward(obs)

    def sample(self, obs: np.ndarray,
               rng: np.random.Generator) -> tuple[np.ndarray, float]:
        mean = self.mean_net.forward(obs)
        std = np.exp(self.log_std)
        action = mean + std * rng.standard_normal(self.act_dim)
        return action, float(self._logp(action[None, :], mean[None, :])[0])

    def _logp(self, actions: np.ndarray, means: np.ndarray) -> np.ndarray:
        std = np.exp(self.log_std)
        zs = (actions - means) / std
        return -0.5 * np.sum(zs * zs + 2.0 * self.log_std + _LOG_2PI, axis=1)

    def log_prob(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(obs)
        actions = np.atleast_2d(actions)
        return self._logp(actions, self.mean_net.forward(obs))

    def entropy(self) -> float:
        return float(np.sum(self.log_std + 0.5 * (_LOG_2PI + 1.0)))


class ValueNet:
    def __init__(self, obs_dim: int, hidden=(64, 64),
                 rng: np.random.Generator | None = None):
        self.net = DenseNet([obs_dim] + list(hidden) + [1], "linear", rng)

    def value(self, obs: np.ndarray) -> float:
        return float(self.net.forward(obs)[0])

    def values(self, obs: np.ndarray) -> np.ndarray:
        return self.net.forward(np.atleast_2d(obs))[:, 0]

    def clone(self) -> "ValueNet":
        other = ValueNet.__new__(ValueNet)
        other.net = self.net.clone()
        return other


class RolloutBuffer:
    """On-policy trajectory store with computed advantages and returns."""

    def __init__(self, obs_dim: int, act_dim: int, capacity: int):
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.log_prob_old = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.values = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.advantages: np.ndarray | None = None
        self.returns: np.ndarray | None = None

    @property
    def capacity(self) -> int:
        return self.obs.shape[0]

    def add(self, obs, action, log_prob, reward, value, done) -> None:
        i = self.size
        if i >= self.capacity:
            raise ValueError("rollout buffer full")
        self.obs[i] = obs
        self.actions[i] = action
        self.log_prob_old[i] = log_prob
        self.rewards[i] = reward
        self.values[i] = value
        self.dones[i] = done
        self.size += 1

    def extend_last_reward(self, extra: float) -> None:
        """Fold a post-handoff reward into the most recent entry."""
        if self.size == 0:
            raise ValueError("cannot extend an empty buffer")
        self.rewards[self.size - 1] += extra

    def clear(self, keep_last: bool = False) -> None:
        if keep_last and self.size > 0:
            last = self.size - 1
            self.obs[0] = self.obs[last]
            self.actions[0] = self.actions[last]
            self.log_prob_old[0] = self.log_prob_old[last]
            self.rewards[0] = self.rewards[last]
            self.values[0] = self.values[last]
            self.dones[0] = self.dones[last]
            self.size = 1
        else:
            self.size = 0
        self.advantages = None
        self.returns = None

    def finalize(self, gamma: float, lam: float,
                 bootstrap_value: float = 0.0) -> None:
        adv, ret = compute_gae(self.rewards[:self.size],
                               self.values[:self.size],
                               self.dones[:self.size], gamma, lam,
                               bootstrap_value)
        self.advantages = adv
        self.returns = ret


def compute_gae(rewards, values, dones, gamma: float, lam: float,
                bootstrap_value: float = 0.0):
    """Backward GAE recursion; episodes cut at done flags.

    bootstrap_value is V(s_T) for the final state when the last entry is a
    truncation rather than a terminal.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    if len(values) != n or len(dones) != n:
        raise ValueError("rewards/values/dones must have equal length")
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError("gamma and lam must lie in [0, 1]")
    advantages = np.zeros(n)
    last_adv = 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            next_value = 0.0
            last_adv = 0.0
        elif t == n - 1:
            next_value = bootstrap_value
        else:
            next_value = values[t + 1]
        delta = rewards[t] + gamma * next_value - values[t]
        last_adv = delta + gamma * lam * (0.0 if dones[t] else last_adv)
        advantages[t] = last_adv
    return advantages, advantages + values


def clipped_surrogate(logp_new, logp_old, advantage, clip_eps: float):
    """Per-sample loss term -min(r*A, clip(r)*A), r = exp(logp_new - logp_old)."""
    if not 0.0 < clip_eps < 1.0:
        raise ValueError("clip_eps must lie in (0, 1)")
    ratio = np.exp(np.asarray(logp_new, dtype=float)
                   - np.asarray(logp_old, dtype=float))
    advantage = np.asarray(advantage, dtype=float)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    return -np.minimum(ratio * advantage, clipped * advantage)


@dataclass
class TrainerState:
    """Adam moments kept across updates for one policy/value pair."""
    policy_adam: AdamState
    value_adam: AdamState


def make_trainer(policy: GaussianPolicy, value_net: ValueNet,
                 cfg: PpoParams) -> TrainerState:
    return TrainerState(
        policy_adam=AdamState(policy.parameters(), lr=cfg.lr),
        value_adam=AdamState(value_net.net.parameters(), lr=cfg.lr),
    )


def ppo_update(policy: GaussianPolicy, value_net: ValueNet,
               buffer: RolloutBuffer, cfg: PpoParams,
               trainer: TrainerState, rng: np.random.Generator) -> dict:
    """K epochs of minibatch Adam on the clipped surrogate + value + entropy."""
    n = buffer.size
    if n == 0:
        raise ValueError("buffer is empty")
    if buffer.advantages is None:
        buffer.finalize(cfg.gamma, cfg.lam)
    obs = buffer.obs[:n]
    actions = buffer.actions[:n]
    logp_old = buffer.log_prob_old[:n]
    returns = buffer.returns[:n]
    adv = buffer.advantages[:n].copy()
    adv_std = adv.std()
    adv = (adv - adv.mean()) / (adv_std + 1e-8)

    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
             "kl": 0.0, "clip_fraction": 0.0, "aborted": False,
             "diagnostics": ""}
    batches = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            b_obs = obs[idx]
            b_act = actions[idx]
            b_adv = adv[idx]
            b_old = logp_old[idx]
            b_ret = returns[idx]
            m = len(idx)

            means, cache = policy.mean_net.forward_cached(b_obs)
            std = np.exp(policy.log_std)
            zs = (b_act - means) / std
            logp_new = -0.5 * np.sum(zs * zs + 2.0 * policy.log_std
                                     + _LOG_2PI, axis=1)
            ratio = np.exp(logp_new - b_old)
            unclipped = ratio * b_adv
            clipped = np.clip(ratio, 1.0 - cfg.clip_eps,
                              1.0 + cfg.clip_eps) * b_adv
            pg_loss = float(np.mean(-np.minimum(unclipped, clipped)))
            entropy = policy.entropy()

            vals, vcache = value_net.net.forward_cached(b_obs)
            verr = vals[:, 0] - b_ret
            v_loss = float(np.mean(verr * verr))

            total = pg_loss + cfg.vf_coef * v_loss - cfg.entropy_coef * entropy
            if not math.isfinite(total):
                stats["aborted"] = True
                stats["diagnostics"] = (
                    f"non-finite loss: pg={pg_loss} v={v_loss} "
                    f"entropy={entropy} ratio_max={np.max(ratio)}")
                return stats

            # d loss / d logp_new: -A*r where the unclipped branch is taken.
            take_unclipped = unclipped <= clipped
            dlogp = np.where(take_unclipped, -b_adv * ratio, 0.0) / m
            # Mean-net gradients via d logp/d mean = (a - mu)/sigma^2.
            upstream_mean = dlogp[:, None] * (b_act - means) / (std * std)
            grads_mean, _ = policy.mean_net.backward(cache, upstream_mean)
            # log_std gradient: surrogate + entropy terms.
            dlogp_dls = zs * zs - 1.0
            grad_ls = np.sum(dlogp[:, None] * dlogp_dls, axis=0)
            grad_ls -= cfg.entropy_coef
            adam_update(policy.parameters(), grads_mean + [grad_ls],
                        trainer.policy_adam)
            policy._clamp()

            upstream_v = (cfg.vf_coef * 2.0 * verr / m)[:, None]
            grads_v, _ = value_net.net.backward(vcache, upstream_v)
            adam_update(value_net.net.parameters(), grads_v,
                        trainer.value_adam)

            stats["policy_loss"] += pg_loss
            stats["value_loss"] += v_loss
            stats["entropy"] = entropy
            stats["kl"] += float(np.mean(b_old - logp_new))
            stats["clip_fraction"] += float(np.mean(
                (ratio < 1.0 - cfg.clip_eps) | (ratio > 1.0 + cfg.clip_eps)))
            batches += 1
    for key in ("policy_loss", "value_loss", "kl", "clip_fraction"):
        stats[key] /= max(batches, 1)
    return stats


def collect_rollout(policy: GaussianPolicy, env_factory, horizon: int,
                    norm_stats, value_net: ValueNet,
                    rng: np.random.Generator, gamma: float = 0.99,
                    lam: float = 0.95, action_adapter=None) -> RolloutBuffer:
    """Run whole episodes until the buffer holds `horizon` steps.

    env_factory() must return a fresh episode environment exposing
    reset() -> Observation, step(action) -> StepResult and a `done` flag.
    action_adapter maps the raw policy sample to the env's action type.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    env = env_factory()
    vec = env.reset().vector()
    buf = RolloutBuffer(len(vec), policy.act_dim, horizon)
    bootstrap = 0.0
    while buf.size < horizon:
        action, logp = policy.sample(vec, rng)
        value = value_net.value(vec)
        env_action = action_adapter(action) if action_adapter else action
        result = env.step(env_action, update_stats=True)
        done = result.done
        buf.add(vec, action, logp, result.reward, value, done)
        if done:
            env = env_factory()
            vec = env.reset().vector()
        else:
            vec = result.obs.vector()
            if buf.size == horizon:
                bootstrap = value_net.value(vec)
    buf.finalize(gamma, lam, bootstrap)
    return buf
