"""Proximal-policy training: rollouts, GAE, and the clipped surrogate update.

Actor and critic are separate networks with their own optimizers and
learning rates. Advantages come from generalized advantage estimation with
terminal bootstrap 0 and are normalized per collected batch; updates run a
fixed number of shuffled minibatch passes. All randomness derives from the
root seed, so training is bit-reproducible.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, ContractError, Tensor, clip_grad_norm
from .backbones import BackboneConfig, DropoutMasks, Network, policy_output
from .data import SectorPanel, SplitSpec
from .env import SectorRotationEnv, run_episode
from .features import FeatureConfig, build_features
from .seeding import make_rng, seed_sequence


class TrainingAbort(RuntimeError):
    """Raised when a loss or parameter turns non-finite; carries a snapshot."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(f"{message}; snapshot: {snapshot}")
        self.snapshot = snapshot


@dataclass
class Trajectory:
    """One episode of collected experience; log-probs frozen at collection."""

    states: np.ndarray        # (E, L, d) observation windows
    t_indices: np.ndarray     # (E,) absolute day index of each observation
    actions: np.ndarray       # (E,) sampled target indices
    old_log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    clip_eps: float = 0.2
    entropy_beta: float = 0.01
    batch_size: int = 64
    ppo_epochs: int = 10
    lr_actor: float = 3e-4
    lr_critic: float = 1e-3
    gae_lambda: float = 0.95
    epochs: int = 100
    advantage_norm: bool = True
    grad_clip: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ContractError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.clip_eps <= 0.0:
            raise ContractError(f"clip_eps must be positive, got {self.clip_eps}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ContractError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if min(self.batch_size, self.ppo_epochs, self.epochs) < 1:
            raise ContractError("batch_size, ppo_epochs, and epochs must be >= 1")


def compute_gae(rewards, values, gamma: float, lam: float,
                normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets.

    delta_t = r_t + gamma V(s_{t+1}) - V(s_t) with terminal bootstrap 0;
    A_t sums (gamma lam)^k delta_{t+k}; returns are raw advantages plus
    values. With ``normalize`` the advantages are then shifted and scaled to
    zero mean, unit variance over the batch.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if r.shape != v.shape or r.ndim != 1:
        raise ContractError(f"rewards shape {r.shape} != values shape {v.shape}")
    adv = np.zeros_like(r)
    gae = 0.0
    for t in range(len(r) - 1, -1, -1):
        next_v = v[t + 1] if t + 1 < len(r) else 0.0
        delta = r[t] + gamma * next_v - v[t]
        gae = delta + gamma * lam * gae
        adv[t] = gae
    returns = adv + v
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


def entropy_of(log_probs: Tensor) -> Tensor:
    """Shannon entropy per row of a log-probability tensor."""
    return ad.neg(ad.tsum(ad.mul(ad.exp(log_probs), log_probs), axis=-1))


def clipped_objective(ratio: Tensor, advantages: Tensor, clip_eps: float) -> Tensor:
    """Per-sample min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)."""
    clipped = ad.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    return ad.minimum(ad.mul(ratio, advantages), ad.mul(clipped, advantages))


@dataclass
class UpdateStats:
    actor_loss: float = 0.0
    critic_loss: float = 0.0
    entropy: float = 0.0
    clip_fraction: float = 0.0
    minibatches: int = 0
    #: max |ratio - 1| on the first minibatch; 0 when masks replay exactly
    first_pass_ratio_error: float = 0.0

    def merge(self, actor_loss, critic_loss, entropy, clip_fraction):
        n = self.minibatches
        self.actor_loss = (self.actor_loss * n + actor_loss) / (n + 1)
        self.critic_loss = (self.critic_loss * n + critic_loss) / (n + 1)
        self.entropy = (self.entropy * n + entropy) / (n + 1)
        self.clip_fraction = (self.clip_fraction * n + clip_fraction) / (n + 1)
        self.minibatches = n + 1


def ppo_update(traj: Trajectory, actor: Network, critic: Network, config: PpoConfig,
               rng: np.random.Generator, actor_opt: Adam | None = None,
               critic_opt: Adam | None = None, mask_fn=None) -> UpdateStats:
    """Run the clipped-surrogate update over the trajectory.

    Minibatches are drawn by shuffled index permutation, ``ppo_epochs``
    passes over the data. ``mask_fn(role, t_indices)`` supplies the replay
    dropout masks recorded at collection time.
    """
    if traj.advantages is None or traj.returns is None:
        raise ContractError("trajectory advantages must be computed before the update")
    actor_opt = actor_opt or Adam(actor.params, lr=config.lr_actor)
    critic_opt = critic_opt or Adam(critic.params, lr=config.lr_critic)
    n = len(traj)
    stats = UpdateStats()
    for _ in range(config.ppo_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            windows = traj.states[idx]
            t_idx = traj.t_indices[idx]
            actions = traj.actions[idx][:, None]
            adv = Tensor(traj.advantages[idx])
            old_lp = Tensor(traj.old_log_probs[idx])
            rets = Tensor(traj.returns[idx])

            logits = actor.forward(windows, masks=mask_fn("actor", t_idx) if mask_fn else None)
            log_probs = ad.log_softmax(logits, axis=-1)
            taken = ad.reshape(ad.gather(log_probs, actions, axis=1), (len(idx),))
            ratio = ad.exp(ad.sub(taken, old_lp))
            if stats.minibatches == 0:
                stats.first_pass_ratio_error = float(np.abs(ratio.data - 1.0).max())
            surr = clipped_objective(ratio, adv, config.clip_eps)
            entropy = entropy_of(log_probs)
            actor_loss = ad.sub(ad.neg(ad.tmean(surr)),
                                ad.mul(ad.tmean(entropy), config.entropy_beta))

            values = ad.reshape(critic.forward(windows, masks=mask_fn("critic", t_idx) if mask_fn else None),
                                (len(idx),))
            err = ad.sub(values, rets)
            critic_loss = ad.tmean(ad.mul(err, err))

            if not (np.isfinite(actor_loss.data) and np.isfinite(critic_loss.data)):
                raise TrainingAbort("non-finite loss", {
                    "actor_loss": float(actor_loss.data),
                    "critic_loss": float(critic_loss.data),
                    "minibatch": stats.minibatches,
                    "ratio_range": [float(ratio.data.min()), float(ratio.data.max())],
                })

            actor_opt.zero_grad()
            ad.backward(actor_loss)
            clip_grad_norm(actor.params, config.grad_clip)
            actor_opt.step()

            critic_opt.zero_grad()
            ad.backward(critic_loss)
            clip_grad_norm(critic.params, config.grad_clip)
            critic_opt.step()

            clip_frac = float(np.mean(np.abs(ratio.data - 1.0) > config.clip_eps))
            stats.merge(float(actor_loss.data), float(critic_loss.data),
                        float(entropy.data.mean()), clip_frac)
    return stats


# ---------------------------------------------------------------------------
# full training loop


@dataclass
class TrainResult:
    actor_state: dict[str, np.ndarray]
    critic_state: dict[str, np.ndarray]
    curve: list[dict]
    meta: dict

    def checkpoint_arrays(self) -> dict[str, np.ndarray]:
        out = {f"actor/{k}": v for k, v in self.actor_state.items()}
        out.update({f"critic/{k}": v for k, v in self.critic_state.items()})
        return out


CURVE_COLUMNS = ("episode", "total_reward", "mean_entropy", "actor_loss", "critic_loss")


def curve_to_text(curve: list[dict]) -> str:
    lines = [",".join(CURVE_COLUMNS)]
    for row in curve:
        lines.append(",".join(
            str(row["episode"]) if c == "episode" else repr(float(row[c]))
            for c in CURVE_COLUMNS
        ))
    return "\n".join(lines) + "\n"


def _collection_masks(cfg: BackboneConfig, seed: int, role: str, episode: int):
    if cfg.dropout <= 0.0:
        return lambda t: None
    return lambda t: DropoutMasks(cfg.dropout, [seed_sequence(seed, "dropout", role, episode, int(t))])


def _update_mask_fn(cfg: BackboneConfig, seed: int, episode: int):
    if cfg.dropout <= 0.0:
        return None

    def mask_fn(role: str, t_indices) -> DropoutMasks:
        seeds = [seed_sequence(seed, "dropout", role, episode, int(t)) for t in t_indices]
        return DropoutMasks(cfg.dropout, seeds)

    return mask_fn


def train(panel: SectorPanel, split: SplitSpec, kind: str, config: PpoConfig,
          backbone: BackboneConfig | None = None, seed: int = 0, top_n: int = 10,
          seq_len: int = 10, critic_kind: str | None = None, rank_by: str = "level",
          feature_config: FeatureConfig = FeatureConfig(), progress=None) -> TrainResult:
    """Train actor and critic on the panel's training split.

    One training epoch is one episode over the split followed by a PPO
    update; the per-episode total reward is the logged learning curve.
    Deterministic given the seed.
    """
    backbone = backbone or BackboneConfig.for_kind(kind)
    critic_backbone = backbone if critic_kind in (None, kind) \
        else BackboneConfig.for_kind(critic_kind, hidden=backbone.hidden, dropout=backbone.dropout)
    critic_kind = critic_kind or kind
    features = build_features(panel, feature_config, stats_end=split.train_end)
    lo, hi = split.train_indices(panel)
    env = SectorRotationEnv(panel, features, lo, hi, seq_len=seq_len, top_n=top_n,
                            rank_by=rank_by)
    d = features.n_features

    actor = Network(kind, d, seq_len, env.n_targets, backbone, make_rng(seed, "init", "actor"))
    critic = Network(critic_kind, d, seq_len, 1, critic_backbone, make_rng(seed, "init", "critic"))
    actor_opt = Adam(actor.params, lr=config.lr_actor)
    critic_opt = Adam(critic.params, lr=config.lr_critic)

    curve: list[dict] = []
    for episode in range(config.epochs):
        actor_masks = _collection_masks(backbone, seed, "actor", episode)
        critic_masks = _collection_masks(critic_backbone, seed, "critic", episode)
        entropies: list[float] = []

        def policy(obs):
            with ad.no_grad():
                logits = actor.forward(obs.window[None], masks=actor_masks(obs.t_index))
            out = policy_output(logits.data[0])
            entropies.append(float(-(out.probs * out.log_probs).sum()))
            return out

        def value_fn(obs):
            with ad.no_grad():
                value = critic.forward(obs.window[None], masks=critic_masks(obs.t_index))
            return float(value.data[0, 0])

        traj = run_episode(env, policy, seed + episode, value_fn=value_fn)
        traj.advantages, traj.returns = compute_gae(
            traj.rewards, traj.values, config.gamma, config.gae_lambda,
            normalize=config.advantage_norm)

        stats = ppo_update(traj, actor, critic, config, make_rng(seed, "ppo", episode),
                           actor_opt=actor_opt, critic_opt=critic_opt,
                           mask_fn=_update_mask_fn(backbone, seed, episode))

        for net, label in ((actor, "actor"), (critic, "critic")):
            for name, tensor in net.params.items():
                if not np.isfinite(tensor.data).all():
                    raise TrainingAbort("non-finite parameters", {
                        "network": label, "parameter": name, "episode": episode})

        row = {
            "episode": episode,
            "total_reward": traj.total_reward,
            "mean_entropy": float(np.mean(entropies)),
            "actor_loss": stats.actor_loss,
            "critic_loss": stats.critic_loss,
            "mean_step_reward": float(traj.rewards.mean()),
            "first_pass_ratio_error": stats.first_pass_ratio_error,
        }
        curve.append(row)
        if progress is not None:
            progress(row)

    meta = {
        "backbone": kind,
        "critic_backbone": critic_kind,
        "in_dim": d,
        "seq_len": seq_len,
        "n_targets": env.n_targets,
        "top_n": top_n,
        "rank_by": rank_by,
        "seed": seed,
        "backbone_config": asdict(backbone),
        "critic_config": asdict(critic_backbone),
        "train_start": split.train_start.isoformat(),
        "train_end": split.train_end.isoformat(),
    }
    return TrainResult(actor_state=actor.state_arrays(), critic_state=critic.state_arrays(),
                       curve=curve, meta=meta)
