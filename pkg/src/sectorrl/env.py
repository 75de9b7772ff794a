"""The sector-rotation decision process.

At step t the agent sees the last L feature rows and picks one of S + 1
targets (S sectors plus a dummy class mapping to cash). The reward is 1.0
when the picked sector is in the next day's top-N capital-share ranking and
-0.1 otherwise; the dummy class never earns the reward. Observations use
data up to day t only, the ranking uses day t+1 only, so the two horizons
never overlap.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SectorPanel, SplitSpec
from .features import FeatureTensor
from .seeding import make_rng

REWARD_HIT = 1.0
REWARD_MISS = -0.1


class EnvError(ValueError):
    pass


class ContractViolationError(EnvError):
    """A policy broke its contract (for example emitted a non-distribution)."""


@dataclass(frozen=True)
class Observation:
    window: np.ndarray  # (L, d) feature rows x_{t-L+1} .. x_t
    t_index: int


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    next_obs: Observation | None
    info: dict


def top_n_sectors(panel: SectorPanel, t: int, n: int, rank_by: str = "level") -> frozenset[int]:
    """Indices of the n sectors with the largest capital share at day t.

    Ties break to the lower sector index. ``rank_by="share_change"`` ranks
    by day-over-day share change instead of the level (falls back to the
    level at t = 0 where no change exists).
    """
    s = panel.n_sectors
    if not 0 <= t < panel.n_days:
        raise EnvError(f"day index {t} out of range [0, {panel.n_days})")
    if not 1 <= n <= s:
        raise EnvError(f"top-n size {n} out of range [1, {s}]")
    if rank_by == "level" or t == 0:
        key = panel.cap_share[:, t]
    elif rank_by == "share_change":
        key = panel.cap_share[:, t] - panel.cap_share[:, t - 1]
    else:
        raise EnvError(f"unknown rank_by '{rank_by}'")
    order = np.lexsort((np.arange(s), -key))
    return frozenset(int(i) for i in order[:n])


class SectorRotationEnv:
    """Stateless MDP over a fixed date range of one panel.

    Observations are windows of the shared feature tensor; the env itself
    holds only read-only references, so episodes may roll in parallel.
    """

    def __init__(self, panel: SectorPanel, features: FeatureTensor,
                 start_idx: int, end_idx: int, seq_len: int = 10,
                 top_n: int = 10, rank_by: str = "level"):
        if seq_len < 1:
            raise EnvError(f"sequence length must be >= 1, got {seq_len}")
        self.panel = panel
        self.features = features
        self.seq_len = seq_len
        self.top_n = top_n
        self.rank_by = rank_by
        self.n_targets = panel.n_sectors + 1
        self.dummy_index = panel.n_sectors
        self.first_t = max(start_idx, features.valid_from + seq_len - 1)
        self.last_t = end_idx  # final day; the last decision happens at last_t - 1
        if self.first_t >= self.last_t:
            raise EnvError(
                f"range [{start_idx}, {end_idx}] leaves no decision steps after "
                f"warmup (first observation at {self.first_t})"
            )

    @classmethod
    def for_split(cls, panel: SectorPanel, features: FeatureTensor, split: SplitSpec,
                  which: str = "train", **kwargs) -> "SectorRotationEnv":
        lo, hi = split.train_indices(panel) if which == "train" else split.test_indices(panel)
        return cls(panel, features, lo, hi, **kwargs)

    @property
    def n_steps(self) -> int:
        return self.last_t - self.first_t

    def observation(self, t: int) -> Observation:
        return Observation(window=self.features.window(t, self.seq_len), t_index=t)

    def reset(self) -> Observation:
        return self.observation(self.first_t)

    def step(self, state: Observation, action: int) -> StepOutcome:
        t = state.t_index
        if not 0 <= action < self.n_targets:
            raise EnvError(f"action {action} out of range [0, {self.n_targets})")
        if t >= self.last_t:
            raise EnvError(f"step at t={t} is past the final decision day {self.last_t - 1}")
        top_set = top_n_sectors(self.panel, t + 1, self.top_n, rank_by=self.rank_by)
        hit = action != self.dummy_index and action in top_set
        reward = REWARD_HIT if hit else REWARD_MISS
        next_obs = self.observation(t + 1) if t + 1 < self.last_t else None
        return StepOutcome(reward=reward, next_obs=next_obs,
                           info={"top_set": top_set, "t": t})


def run_episode(env: SectorRotationEnv, policy, seed: int, value_fn=None):
    """Roll one episode, sampling each action from the policy's distribution.

    ``policy(obs)`` must return a probability vector over the env's targets
    (anything with a ``probs`` attribute also works); ``value_fn(obs)``
    optionally supplies critic estimates. Deterministic given ``seed``.
    """
    from .ppo import Trajectory  # env hosts the rollout, ppo owns the record

    rng = make_rng(seed, "rollout")
    windows, t_indices, actions, log_probs, rewards, values = [], [], [], [], [], []
    obs = env.reset()
    while True:
        raw = policy(obs)
        probs = np.asarray(getattr(raw, "probs", raw), dtype=np.float64)
        if probs.shape != (env.n_targets,):
            raise ContractViolationError(
                f"policy returned shape {probs.shape}, expected ({env.n_targets},)"
            )
        if not np.isfinite(probs).all() or (probs < -1e-9).any() or abs(probs.sum() - 1.0) > 1e-6:
            raise ContractViolationError("policy emitted a non-distribution")
        sample_probs = np.clip(probs, 0.0, None)
        sample_probs = sample_probs / sample_probs.sum()
        action = int(rng.choice(env.n_targets, p=sample_probs))
        outcome = env.step(obs, action)
        windows.append(obs.window)
        t_indices.append(obs.t_index)
        actions.append(action)
        # record the policy's own log-probability (not the renormalized one),
        # so update-time recomputation reproduces it bit for bit
        policy_lp = getattr(raw, "log_probs", None)
        log_probs.append(float(policy_lp[action]) if policy_lp is not None
                         else float(np.log(probs[action])))
        rewards.append(outcome.reward)
        values.append(float(value_fn(obs)) if value_fn is not None else 0.0)
        if outcome.next_obs is None:
            break
        obs = outcome.next_obs
    return Trajectory(
        states=np.stack(windows),
        t_indices=np.array(t_indices, dtype=np.int64),
        actions=np.array(actions, dtype=np.int64),
        old_log_probs=np.array(log_probs),
        rewards=np.array(rewards),
        values=np.array(values),
    )
