"""
Proximal Policy Optimization for the hover task.

One iteration collects ``rollout_steps`` transitions from each of
``n_envs`` environments, computes GAE advantages, then runs ``epochs``
passes of clipped-surrogate minibatch updates with Adam.

Time-limit truncation bootstraps from the critic's value of the final
observation; failure termination does not.
"""

import csv
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import nn
from .dynamics import QuadrotorParams
from .env import ACTION_SIZE, OBS_SIZE, InitSpec, ObservationSpec, QuadrotorEnv
from .errors import InvalidInputError, NumericalDivergenceError
from .presets import load_preset, reward_to_dict, termination_to_dict

log = logging.getLogger(__name__)

CURVE_FIELDS = (
    "iteration",
    "timesteps",
    "episode_mean_reward",
    "episode_mean_length",
    "episodes",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_fraction",
    "approx_kl",
)


@dataclass(frozen=True)
class PpoConfig:
    batch_size: int = 128
    learning_rate: float = 2e-4
    rollout_steps: int = 4096  # per environment
    epochs: int = 12
    clip_range: float = 0.15
    n_envs: int = 4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    value_coefficient: float = 0.5
    entropy_coefficient: float = 0.0
    max_gradient_norm: float = 0.5
    total_timesteps: int = 6_000_000
    adam_eps: float = 1e-5
    checkpoint_every: int = 10  # iterations

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise InvalidInputError("gamma must lie in (0, 1)")
        if not 0 <= self.gae_lambda <= 1:
            raise InvalidInputError("gae_lambda must lie in [0, 1]")
        if not 0 < self.clip_range < 1:
            raise InvalidInputError("clip_range must lie in (0, 1)")
        for name in ("batch_size", "rollout_steps", "epochs", "n_envs", "total_timesteps", "checkpoint_every"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be a positive integer")
        if self.rollout_steps % self.batch_size:
            raise InvalidInputError("rollout_steps must be divisible by batch_size")
        if not (self.learning_rate > 0 and self.max_gradient_norm > 0):
            raise InvalidInputError("learning_rate and max_gradient_norm must be positive")

    @property
    def steps_per_iteration(self):
        return self.rollout_steps * self.n_envs

    @property
    def iterations(self):
        return math.ceil(self.total_timesteps / self.steps_per_iteration)


@dataclass
class RolloutBuffer:
    """Arrays are indexed ``[step, env]``."""

    observations: np.ndarray
    pre_squash: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    next_values: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None
    episode_returns: list = field(default_factory=list)
    episode_lengths: list = field(default_factory=list)

    @classmethod
    def empty(cls, steps, n_envs):
        shape = (steps, n_envs)
        return cls(
            observations=np.zeros(shape + (OBS_SIZE,)),
            pre_squash=np.zeros(shape + (ACTION_SIZE,)),
            actions=np.zeros(shape + (ACTION_SIZE,)),
            log_probs=np.zeros(shape),
            rewards=np.zeros(shape),
            values=np.zeros(shape),
            next_values=np.zeros(shape),
            terminated=np.zeros(shape, dtype=bool),
            truncated=np.zeros(shape, dtype=bool),
        )

    def __len__(self):
        return self.rewards.size


class EnvPool:
    """Fixed set of environments with auto-reset and per-episode bookkeeping."""

    def __init__(self, envs):
        self.envs = list(envs)
        self.observations = None
        self._returns = np.zeros(len(self.envs))
        self._lengths = np.zeros(len(self.envs), dtype=np.int64)

    def __len__(self):
        return len(self.envs)

    def reset(self, seeds=None):
        seeds = seeds if seeds is not None else [None] * len(self.envs)
        self.observations = np.stack([env.reset(seed=s)[1] for env, s in zip(self.envs, seeds)])
        self._returns[:] = 0.0
        self._lengths[:] = 0
        return self.observations


def collect_rollout(policy, pool, steps, rng):
    """
    Run the frozen ``policy`` for ``steps`` transitions in every environment.

    Finished episodes are reset in place. Completed episode returns and
    lengths are attached to the buffer.
    """
    if pool.observations is None:
        pool.reset()
    n = len(pool)
    buf = RolloutBuffer.empty(steps, n)
    log_std = np.clip(policy.log_std, nn.LOG_STD_MIN, nn.LOG_STD_MAX)
    std = np.exp(log_std)
    obs = pool.observations
    for t in range(steps):
        mean = nn.forward(policy.actor, obs)
        u = mean + std * rng.standard_normal(mean.shape)
        actions = np.tanh(u)
        buf.observations[t] = obs
        buf.pre_squash[t] = u
        buf.actions[t] = actions
        buf.log_probs[t] = nn.squashed_log_prob(u, mean, log_std)
        buf.values[t] = nn.value(policy, obs)
        next_obs = np.empty_like(obs)
        final_obs = {}
        for i, env in enumerate(pool.envs):
            out = env.step(actions[i])
            buf.rewards[t, i] = out.reward
            buf.terminated[t, i] = out.terminated
            buf.truncated[t, i] = out.truncated
            pool._returns[i] += out.reward
            pool._lengths[i] += 1
            if out.terminated or out.truncated:
                buf.episode_returns.append(float(pool._returns[i]))
                buf.episode_lengths.append(int(pool._lengths[i]))
                pool._returns[i] = 0.0
                pool._lengths[i] = 0
                if out.truncated:
                    final_obs[i] = out.observation
                next_obs[i] = env.reset()[1]
            else:
                next_obs[i] = out.observation
        if final_obs:
            idx = sorted(final_obs)
            buf.next_values[t, idx] = nn.value(policy, np.stack([final_obs[i] for i in idx]))
        if t > 0:
            cont = ~(buf.terminated[t - 1] | buf.truncated[t - 1])
            buf.next_values[t - 1, cont] = buf.values[t, cont]
        obs = next_obs
    last = ~(buf.terminated[-1] | buf.truncated[-1])
    if last.any():
        buf.next_values[-1, last] = nn.value(policy, obs[last])
    pool.observations = obs
    return buf


def compute_gae(buffer, gamma, lam):
    """
    Generalized advantage estimates and value targets, stored on ``buffer``.

    ``delta_t = r_t + gamma·V(s_{t+1})·(1 - terminated_t) - V(s_t)``, and the
    exponentially weighted sum restarts after every terminated or truncated step.
    """
    adv = np.zeros_like(buffer.rewards)
    running = np.zeros(buffer.rewards.shape[1])
    boundary = buffer.terminated | buffer.truncated
    for t in range(len(buffer.rewards) - 1, -1, -1):
        delta = buffer.rewards[t] + gamma * buffer.next_values[t] * ~buffer.terminated[t] - buffer.values[t]
        running = delta + gamma * lam * ~boundary[t] * running
        adv[t] = running
    buffer.advantages = adv
    buffer.returns = adv + buffer.values
    return buffer.advantages, buffer.returns


class Adam:
    """Adam over a list of arrays updated in place."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        out = {"adam_t": np.array(self.t, dtype=np.int64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"adam_m{i}"] = m
            out[f"adam_v{i}"] = v
        return out

    def load_state_arrays(self, arrays):
        self.t = int(arrays["adam_t"])
        for i in range(len(self.m)):
            self.m[i][...] = arrays[f"adam_m{i}"]
            self.v[i][...] = arrays[f"adam_v{i}"]


def minibatch_loss_and_grads(policy, obs, u, old_log_probs, advantages, returns, config):
    """
    Clipped-surrogate loss on one minibatch and its gradient for every
    array in ``policy.arrays()``.

    ``advantages`` are used as given (normalize beforehand).
    """
    b = len(obs)
    log_std = policy.log_std
    mean, cache_a = nn.forward_cached(policy.actor, obs)
    log_prob = nn.squashed_log_prob(u, mean, log_std)
    ratio = np.exp(log_prob - old_log_probs)
    clipped = np.clip(ratio, 1.0 - config.clip_range, 1.0 + config.clip_range)
    surr1 = ratio * advantages
    surr2 = clipped * advantages
    policy_loss = -np.mean(np.minimum(surr1, surr2))

    v, cache_c = nn.forward_cached(policy.critic, obs)
    v = v[:, 0]
    value_loss = np.mean((returns - v) ** 2)
    entropy = float(np.sum(log_std + 0.5 + nn._HALF_LOG_2PI))
    loss = policy_loss + config.value_coefficient * value_loss - config.entropy_coefficient * entropy
    if not np.isfinite(loss):
        raise NumericalDivergenceError(
            f"non-finite PPO loss (policy={policy_loss}, value={value_loss}, max|ratio|={np.max(np.abs(ratio))})"
        )

    # d loss / d log_prob; the clipped branch has zero slope wherever it is the minimum
    g_logp = -(advantages * ratio * (surr1 <= surr2)) / b
    inv_var = np.exp(-2.0 * log_std)
    diff = u - mean
    g_mean = g_logp[:, None] * diff * inv_var
    g_log_std = (g_logp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0) - config.entropy_coefficient
    actor_grads, _ = nn.backward(policy.actor, obs, g_mean, cache_a)
    g_v = (config.value_coefficient * 2.0 / b) * (v - returns)
    critic_grads, _ = nn.backward(policy.critic, obs, g_v[:, None], cache_c)

    grads = actor_grads.arrays() + critic_grads.arrays() + [g_log_std]
    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": entropy,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > config.clip_range)),
        "approx_kl": float(np.mean((ratio - 1.0) - (log_prob - old_log_probs))),
        "ratio": ratio,
    }
    return float(loss), grads, stats


def clip_grad_norm(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    coef = max_norm / (total + 1e-6)
    if coef < 1.0:
        for g in grads:
            g *= coef
    return total


def normalize_advantages(adv):
    if len(adv) < 2:
        return adv
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_update(policy, buffer, config, optimizer, rng):
    """
    Run ``config.epochs`` passes of shuffled minibatch updates on ``policy``.

    Returns mean statistics over all minibatches, plus
    ``first_ratio_max_deviation``: ``max |ratio - 1|`` on the very first
    minibatch, which is zero up to rounding because the policy has not
    moved since collection.
    """
    if buffer.advantages is None:
        raise InvalidInputError("compute_gae must run before ppo_update")
    obs = buffer.observations.reshape(-1, OBS_SIZE)
    u = buffer.pre_squash.reshape(-1, ACTION_SIZE)
    old_logp = buffer.log_probs.reshape(-1)
    adv = buffer.advantages.reshape(-1)
    ret = buffer.returns.reshape(-1)
    n = len(obs)
    batch = min(config.batch_size, n)
    totals = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_fraction": 0.0, "approx_kl": 0.0}
    first_dev = None
    count = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            _, grads, stats = minibatch_loss_and_grads(
                policy, obs[idx], u[idx], old_logp[idx], normalize_advantages(adv[idx]), ret[idx], config
            )
            if first_dev is None:
                first_dev = float(np.max(np.abs(stats["ratio"] - 1.0)))
            clip_grad_norm(grads, config.max_gradient_norm)
            optimizer.step(grads)
            policy.clamp_log_std()
            for key in totals:
                totals[key] += stats[key]
            count += 1
    out = {k: v / count for k, v in totals.items()}
    out["first_ratio_max_deviation"] = first_dev
    return out


@dataclass
class TrainResult:
    policy: nn.PolicyParameters
    curve: list
    checkpoints: list
    diverged: bool = False


def _checkpoint_metadata(preset, params, observation, init, config, seed, iteration, timesteps):
    return {
        "preset": preset.name,
        "reward": reward_to_dict(preset.reward),
        "termination": termination_to_dict(preset.termination),
        "quadrotor": params.to_dict(),
        "observation": asdict(observation),
        "init": {k: list(v) for k, v in asdict(init).items()},
        "ppo": asdict(config),
        "seed": seed,
        "iteration": iteration,
        "timesteps": timesteps,
    }


def make_envs(preset, n_envs, seeds, params=None, observation=None, init=None):
    return [
        QuadrotorEnv(preset.reward, preset.termination, params=params, observation=observation, init=init, seed=s)
        for s in seeds
    ]


def train(
    preset,
    config=PpoConfig(),
    seed=0,
    out_dir=None,
    params=None,
    observation=None,
    init=None,
    resume_from=None,
    progress=None,
):
    """
    Train a policy for ``preset`` (a name or :class:`~quadtune.presets.Preset`).

    With ``out_dir`` set, writes ``learning_curve.csv`` row by row and
    ``checkpoints/iter_XXXX.npz`` every ``config.checkpoint_every``
    iterations plus ``checkpoints/final.npz``. A run is fully determined by
    ``seed``. On a non-finite loss the error is logged, the last written
    checkpoint stays in place, and the result comes back with ``diverged``
    set.
    """
    preset = load_preset(preset)
    params = params or QuadrotorParams()
    observation = observation or ObservationSpec()
    init = init or InitSpec()
    ss = np.random.SeedSequence(seed)
    s_policy, s_envs, s_sample, s_shuffle = ss.spawn(4)
    env_seeds = [int(s.generate_state(1)[0]) for s in s_envs.spawn(config.n_envs)]
    policy = nn.init_policy(s_policy)
    sample_rng = np.random.default_rng(s_sample)
    shuffle_rng = np.random.default_rng(s_shuffle)
    optimizer = Adam(policy.arrays(), config.learning_rate, eps=config.adam_eps)
    start_iter = 0

    if resume_from is not None:
        loaded, meta, extra = nn.load_checkpoint(resume_from, with_extra=True)
        for dst, src in zip(policy.arrays(), loaded.arrays()):
            dst[...] = src
        if "adam_t" in extra:
            optimizer.load_state_arrays(extra)
        start_iter = int(meta.get("iteration", 0))
        # fresh but reproducible streams for the remainder of the run
        resumed = np.random.SeedSequence([seed, start_iter])
        s_envs, s_sample, s_shuffle = resumed.spawn(3)
        env_seeds = [int(s.generate_state(1)[0]) for s in s_envs.spawn(config.n_envs)]
        sample_rng = np.random.default_rng(s_sample)
        shuffle_rng = np.random.default_rng(s_shuffle)

    pool = EnvPool(make_envs(preset, config.n_envs, env_seeds, params, observation, init))
    pool.reset()
    recent = deque(maxlen=100)
    recent_len = deque(maxlen=100)
    curve, checkpoints = [], []

    out_dir = Path(out_dir) if out_dir is not None else None
    writer = fh = None
    if out_dir is not None:
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "learning_curve.csv", "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        writer.writeheader()

    def save(name, iteration):
        path = out_dir / "checkpoints" / name
        meta = _checkpoint_metadata(
            preset, params, observation, init, config, seed, iteration, iteration * config.steps_per_iteration
        )
        nn.save_checkpoint(path, policy, meta, optimizer.state_arrays())
        checkpoints.append(path)

    diverged = False
    try:
        for it in range(start_iter, config.iterations):
            try:
                buf = collect_rollout(policy, pool, config.rollout_steps, sample_rng)
                compute_gae(buf, config.gamma, config.gae_lambda)
                stats = ppo_update(policy, buf, config, optimizer, shuffle_rng)
            except NumericalDivergenceError as exc:
                log.error("training diverged at iteration %d: %s", it + 1, exc)
                diverged = True
                break
            recent.extend(buf.episode_returns)
            recent_len.extend(buf.episode_lengths)
            row = {
                "iteration": it + 1,
                "timesteps": (it + 1) * config.steps_per_iteration,
                "episode_mean_reward": float(np.mean(recent)) if recent else float("nan"),
                "episode_mean_length": float(np.mean(recent_len)) if recent_len else float("nan"),
                "episodes": len(buf.episode_returns),
                **{k: stats[k] for k in ("policy_loss", "value_loss", "entropy", "clip_fraction", "approx_kl")},
            }
            curve.append(row)
            if writer is not None:
                writer.writerow(row)
                fh.flush()
                if (it + 1) % config.checkpoint_every == 0:
                    save(f"iter_{it + 1:04d}.npz", it + 1)
            if progress is not None:
                progress(row)
            log.info(
                "iter %d  steps %d  ep_rew %.3f  ep_len %.1f  clip %.3f",
                row["iteration"], row["timesteps"], row["episode_mean_reward"], row["episode_mean_length"],
                row["clip_fraction"],
            )
        else:
            if out_dir is not None:
                save("final.npz", config.iterations)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(policy=policy, curve=curve, checkpoints=checkpoints, diverged=diverged)
