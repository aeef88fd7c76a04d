"""Augmented random search over linear state-feedback policies.

Each iteration samples K Gaussian direction vectors, rolls out the policy
perturbed by +/- nu along every direction (one shared environment seed per
pair, so the two signs see the same traffic draw), keeps the b best-scoring
directions, and takes a reward-weighted step normalized by the standard
deviation of the retained rewards. Observations are whitened by running
per-component statistics accumulated over everything the policy has seen.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

VAR_FLOOR = 1e-8  # variance below this is treated as this when whitening
CHECKPOINT_MAGIC = b"ECOPOL01"

_TRAIN_TAG = 0
_EVAL_TAG = 1


class CheckpointError(RuntimeError):
    """Raised for malformed or mismatched checkpoint files."""


def derive_episode_seed(base_seed: int, tag: int, iteration: int, k: int) -> int:
    """Stable per-episode seed; paired +/- rollouts share (tag, iteration, k)."""
    return int(np.random.SeedSequence([base_seed, tag, iteration, k])
               .generate_state(1)[0])


def batch_moments(states: np.ndarray) -> tuple[int, np.ndarray, np.ndarray]:
    """Count, mean, and sum of squared deviations per component."""
    arr = np.asarray(states, dtype=float)
    n = arr.shape[0]
    mean = arr.mean(axis=0)
    m2 = ((arr - mean) ** 2).sum(axis=0)
    return n, mean, m2


@dataclass
class RunningStats:
    """Streaming per-component mean and population variance (merge form).

    Holds the variance itself (not the running squared-deviation sum) so a
    checkpoint storing mean/var/count restores the exact whitening. Before
    any samples the variance is ones, whitening with the identity.
    """

    mean: np.ndarray
    var: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "RunningStats":
        return cls(np.zeros(dim), np.ones(dim), 0)

    def merge(self, n_b: int, mean_b: np.ndarray, m2_b: np.ndarray) -> None:
        """Fold in a batch given by count, mean, and squared-deviation sum."""
        if n_b == 0:
            return
        if self.count == 0:
            self.mean = np.array(mean_b, dtype=float, copy=True)
            self.var = np.asarray(m2_b, dtype=float) / n_b
            self.count = int(n_b)
            return
        n_a = self.count
        n = n_a + n_b
        delta = mean_b - self.mean
        m2 = self.var * n_a + m2_b + delta * delta * (n_a * n_b / n)
        self.mean = self.mean + delta * (n_b / n)
        self.var = m2 / n
        self.count = n

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float)
        self.merge(1, x, np.zeros_like(x))

    def update_batch(self, states: np.ndarray) -> None:
        states = np.asarray(states, dtype=float)
        if states.size == 0:
            return
        self.merge(*batch_moments(states))


@dataclass
class LinearPolicy:
    """Linear acceleration policy acting on whitened observations."""

    theta: np.ndarray  # (p,)
    stats: RunningStats

    @classmethod
    def zeros(cls, dim: int) -> "LinearPolicy":
        return cls(np.zeros(dim), RunningStats.zeros(dim))

    @property
    def dim(self) -> int:
        return self.theta.shape[0]


def sample_directions(count: int, rng: np.random.Generator, dim: int) -> np.ndarray:
    """(count, dim) matrix of iid standard normal search directions."""
    if count <= 0:
        raise ValueError("direction count must be positive")
    return rng.standard_normal((count, dim))


def _effective_weights(theta: np.ndarray, stats_mean: np.ndarray,
                       stats_var: np.ndarray) -> tuple[np.ndarray, float]:
    """Fold whitening into the weight vector: a = w_eff @ x - bias."""
    isd = 1.0 / np.sqrt(np.maximum(stats_var, VAR_FLOOR))
    w_eff = theta * isd
    return w_eff, float(w_eff @ stats_mean)


def policy_act(policy: LinearPolicy, obs: np.ndarray,
               perturbation: Optional[tuple[int, np.ndarray]] = None,
               noise: float = 0.0,
               low: float = -math.inf, high: float = math.inf) -> float:
    """Action of the (optionally perturbed) policy for one observation.

    ``perturbation`` is (sign, direction); the evaluated weights are
    theta + sign * noise * direction. The output is clipped to [low, high].
    """
    theta = policy.theta
    if perturbation is not None:
        sign, direction = perturbation
        theta = theta + sign * noise * direction
    w_eff, bias = _effective_weights(theta, policy.stats.mean, policy.stats.var)
    a = float(w_eff @ obs) - bias
    if a < low:
        return low
    if a > high:
        return high
    return a


def run_episode(env, theta: np.ndarray, stats_mean: np.ndarray,
                stats_var: np.ndarray, seed: int,
                collect_states: bool = True):
    """Roll one episode with fixed weights; returns reward and state moments.

    Returns (total_reward, steps, moments) where moments is (n, mean, m2)
    over the observations the policy acted on, or None when not collected.
    """
    w_eff, bias = _effective_weights(theta, stats_mean, stats_var)
    low = env.action_low
    high = env.action_high
    obs = env.reset(seed)
    states = [obs] if collect_states else None
    total = 0.0
    steps = 0
    done = False
    while not done:
        a = float(w_eff @ obs) - bias
        if a < low:
            a = low
        elif a > high:
            a = high
        obs, reward, done = env.step(a)
        total += reward
        steps += 1
        if collect_states and not done:
            states.append(obs)
    moments = batch_moments(np.asarray(states)) if collect_states else None
    return total, steps, moments


def _rollout_task(args):
    """Worker entry: build an environment, run one episode. Picklable."""
    env_factory, theta, mean, var, seed = args
    env = env_factory()
    return run_episode(env, theta, mean, var, seed, collect_states=True)


@dataclass(frozen=True)
class ArsConfig:
    """Hyperparameters of the search."""

    iterations: int = 300
    directions: int = 32  # K directions per iteration (2K rollouts)
    top_directions: int = 16  # b directions kept for the update
    step_size: float = 0.015  # alpha
    noise: float = 0.2  # nu, exploration stddev along each direction
    base_seed: int = 0
    eval_interval: int = 10  # iterations between greedy eval episodes; 0 = never
    horizon: float = 600.0  # s, episode truncation handed to the environment

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ValueError("ars.iterations must be >= 0")
        if self.directions <= 0:
            raise ValueError("ars.directions must be positive")
        if not 0 < self.top_directions <= self.directions:
            raise ValueError("ars.top_directions must be in [1, directions]")
        if self.step_size <= 0:
            raise ValueError("ars.step_size must be positive")
        if self.noise <= 0:
            raise ValueError("ars.noise must be positive")
        if self.base_seed < 0:
            raise ValueError("ars.base_seed must be >= 0")
        if self.eval_interval < 0:
            raise ValueError("ars.eval_interval must be >= 0")
        if self.horizon <= 0:
            raise ValueError("ars.horizon must be positive")


@dataclass
class IterationReport:
    iteration: int
    rewards: np.ndarray  # (K, 2), columns are the +/- rollout returns
    update_norm: float
    mean_reward: float
    smoothed_reward: float
    eval_reward: float  # nan when no eval episode ran this iteration


def update_policy(policy: LinearPolicy, directions: np.ndarray,
                  paired_rewards: np.ndarray, config: ArsConfig) -> float:
    """One ARS parameter update in place; returns the update norm.

    Directions are ranked by max(r+, r-) with ties broken by index; the step
    is alpha / (b * std(retained rewards)) times the reward-weighted sum of
    retained directions. A zero standard deviation skips the update.
    """
    rewards = np.asarray(paired_rewards, dtype=float)
    k = rewards.shape[0]
    if directions.shape[0] != k:
        raise ValueError("directions and paired_rewards disagree on K")
    b = min(config.top_directions, k)
    scores = np.maximum(rewards[:, 0], rewards[:, 1])
    order = np.argsort(-scores, kind="stable")[:b]
    retained = rewards[order].ravel()
    sigma_r = float(np.std(retained))
    if sigma_r == 0.0:
        return 0.0
    weights = rewards[order, 0] - rewards[order, 1]
    step = (config.step_size / (b * sigma_r)) * (weights @ directions[order])
    policy.theta = policy.theta + step
    return float(np.linalg.norm(step))


def update_normalizer(policy: LinearPolicy, states: np.ndarray) -> None:
    """Fold a batch of visited observations into the whitening statistics."""
    policy.stats.update_batch(states)


def train(config: ArsConfig, env_factory: Callable[[], object], jobs: int = 1,
          progress: Optional[Callable[[IterationReport], None]] = None
          ) -> tuple[LinearPolicy, list[IterationReport]]:
    """Run the full search; returns the trained policy and per-iteration reports.

    ``env_factory`` must build independent environments (it is pickled to
    worker processes when jobs > 1). Results are identical for any ``jobs``:
    rollouts are ordered by direction index and sign, and normalizer moments
    are merged in that fixed order after the parameter update.
    """
    probe = env_factory()
    dim = probe.observation_dim
    policy = LinearPolicy.zeros(dim)
    rng = np.random.default_rng(config.base_seed)
    reports: list[IterationReport] = []
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    inline_env = probe if pool is None else None
    try:
        smoothed = 0.0
        for iteration in range(config.iterations):
            directions = sample_directions(config.directions, rng, dim)
            mean = policy.stats.mean
            var = policy.stats.var
            tasks = []
            for k in range(config.directions):
                seed = derive_episode_seed(config.base_seed, _TRAIN_TAG,
                                           iteration, k)
                for sign in (1.0, -1.0):
                    theta = policy.theta + sign * config.noise * directions[k]
                    tasks.append((theta, seed))
            if pool is not None:
                results = list(pool.map(
                    _rollout_task,
                    [(env_factory, theta, mean, var, seed)
                     for theta, seed in tasks],
                ))
            else:
                results = [run_episode(inline_env, theta, mean, var, seed)
                           for theta, seed in tasks]

            rewards = np.array([r[0] for r in results]).reshape(config.directions, 2)
            update_norm = update_policy(policy, directions, rewards, config)
            for _, _, moments in results:
                policy.stats.merge(*moments)

            mean_reward = float(rewards.mean())
            if iteration == 0:
                smoothed = mean_reward
            else:
                smoothed = 0.8 * smoothed + 0.2 * mean_reward
            eval_reward = math.nan
            if config.eval_interval and (iteration + 1) % config.eval_interval == 0:
                eval_env = inline_env if inline_env is not None else env_factory()
                eval_seed = derive_episode_seed(config.base_seed, _EVAL_TAG,
                                                iteration, 0)
                eval_reward, _, _ = run_episode(
                    eval_env, policy.theta, policy.stats.mean, policy.stats.var,
                    eval_seed, collect_states=False)
            report = IterationReport(iteration, rewards, update_norm,
                                     mean_reward, smoothed, eval_reward)
            reports.append(report)
            if progress is not None:
                progress(report)
    finally:
        if pool is not None:
            pool.shutdown()
    return policy, reports


# ----------------------------------------------------------------------
# checkpoint io

def save_checkpoint(path: Path | str, policy: LinearPolicy,
                    sidecar: Optional[dict] = None) -> None:
    """Write the policy to ``path`` and its config snapshot to ``path``.json.

    Layout: 8-byte magic, then little-endian float64 values
    [dim, action_dim, theta..., mean..., var..., count].
    """
    path = Path(path)
    dim = policy.dim
    payload = np.concatenate((
        [float(dim), 1.0],
        policy.theta,
        policy.stats.mean,
        policy.stats.var,
        [float(policy.stats.count)],
    )).astype("<f8")
    path.write_bytes(CHECKPOINT_MAGIC + payload.tobytes())
    if sidecar is not None:
        meta = dict(sidecar)
        meta.setdefault("observation_dim", dim)
        meta.setdefault("action_dim", 1)
        Path(str(path) + ".json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path: Path | str) -> tuple[LinearPolicy, Optional[dict]]:
    """Read a policy checkpoint; returns (policy, sidecar dict or None)."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < len(CHECKPOINT_MAGIC) or not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a policy checkpoint (bad magic)")
    values = np.frombuffer(blob[len(CHECKPOINT_MAGIC):], dtype="<f8")
    if values.size < 2:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    dim = int(values[0])
    action_dim = int(values[1])
    expected = 2 + 3 * dim + 1
    if dim <= 0 or action_dim != 1 or values.size != expected:
        raise CheckpointError(
            f"{path}: malformed checkpoint (dim={dim}, action_dim={action_dim}, "
            f"{values.size} values, expected {expected})")
    theta = np.array(values[2:2 + dim])
    mean = np.array(values[2 + dim:2 + 2 * dim])
    var = np.array(values[2 + 2 * dim:2 + 3 * dim])
    count = int(values[-1])
    policy = LinearPolicy(theta, RunningStats(mean, var, count))
    sidecar_path = Path(str(path) + ".json")
    sidecar = None
    if sidecar_path.exists():
        sidecar = json.loads(sidecar_path.read_text())
    return policy, sidecar
