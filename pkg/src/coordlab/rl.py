"""Optimization core: GAE, clipped-surrogate PPO and behavior cloning.

Losses are factored out of the update loops so gradient correctness can be
checked against finite differences on tiny double-precision networks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import EmptyDatasetError, TrainingDivergedError
from .kitchen import ACTIONS, observe, reset, step
from .nets import RecurrentNet


@dataclass
class PpoConfig:
    learning_rate: float = 5e-4
    epochs: int = 15
    discount: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    entropy_coeff: float = 0.01
    value_coeff: float = 0.5
    parallel_envs: int = 200
    episode_length: int = 400
    total_env_steps: int = 5_000_000
    shaping_weight: float = 1.0
    shaping_fraction: float = 1.0  # fraction of total steps with shaping active

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0 < self.discount <= 1:
            raise ValueError(f"discount must be in (0, 1], got {self.discount}")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.clip_ratio < 0:
            raise ValueError(f"clip_ratio must be >= 0, got {self.clip_ratio}")
        if self.parallel_envs < 1 or self.episode_length < 1:
            raise ValueError("parallel_envs and episode_length must be >= 1")
        if not 0 <= self.shaping_fraction <= 1:
            raise ValueError(f"shaping_fraction must be in [0, 1], got {self.shaping_fraction}")

    @property
    def batch(self) -> int:
        # two seats of experience per environment per iteration
        return 2 * self.parallel_envs * self.episode_length


def gae(rewards, values, discount: float, lam: float):
    """Generalized advantage estimation.

    rewards: (T,) or (T, B); values: (T+1,) or (T+1, B) including the
    bootstrap value after the final step. Returns (advantages, returns)
    with returns = advantages + values[:-1].
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != rewards.shape[0] + 1:
        raise ValueError(
            f"values must have one bootstrap entry beyond rewards: "
            f"{values.shape[0]} vs {rewards.shape[0]} + 1"
        )
    advantages = np.zeros_like(rewards)
    carry = 0.0
    for t in range(rewards.shape[0] - 1, -1, -1):
        delta = rewards[t] + discount * values[t + 1] - values[t]
        carry = delta + discount * lam * carry
        advantages[t] = carry
    return advantages, advantages + values[:-1]


@dataclass
class RolloutBatch:
    """Fixed-length sequences, all starting from a fresh recurrent state."""

    obs: torch.Tensor  # (T, B, C, H, W)
    actions: torch.Tensor  # (T, B) int64
    log_probs: torch.Tensor  # (T, B) behavior log-prob of the taken action
    advantages: torch.Tensor  # (T, B)
    returns: torch.Tensor  # (T, B)

    def to(self, dtype):
        return RolloutBatch(
            obs=self.obs.to(dtype),
            actions=self.actions,
            log_probs=self.log_probs.to(dtype),
            advantages=self.advantages.to(dtype),
            returns=self.returns.to(dtype),
        )


def ppo_loss(net: RecurrentNet, batch: RolloutBatch, cfg: PpoConfig):
    """Clipped-surrogate loss with entropy bonus and value regression."""
    outputs, _ = net(batch.obs)
    logp_all = outputs["action"]
    logp = logp_all.gather(-1, batch.actions.unsqueeze(-1)).squeeze(-1)

    adv = batch.advantages
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    ratio = torch.exp(logp - batch.log_probs)
    clipped = torch.clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
    policy_loss = -torch.min(ratio * adv, clipped * adv).mean()

    value = outputs["value"].squeeze(-1)
    value_loss = ((value - batch.returns) ** 2).mean()
    entropy = -(logp_all.exp() * logp_all).sum(-1).mean()

    loss = policy_loss + cfg.value_coeff * value_loss - cfg.entropy_coeff * entropy
    stats = {
        "policy_loss": policy_loss.item(),
        "value_loss": value_loss.item(),
        "entropy": entropy.item(),
        "approx_kl": (batch.log_probs - logp).mean().item(),
    }
    return loss, stats


def ppo_update(net: RecurrentNet, batch: RolloutBatch, cfg: PpoConfig, optimizer) -> dict:
    """Run cfg.epochs full-batch passes. Stats reflect the entry point of the
    update (first pass, before any step), so approx_kl is 0 when the batch was
    collected with the current parameters."""
    first_stats = None
    for _ in range(cfg.epochs):
        loss, stats = ppo_loss(net, batch, cfg)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(f"non-finite PPO loss: {stats}")
        if first_stats is None:
            first_stats = stats
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    return first_stats


@dataclass
class BcBatch:
    obs: torch.Tensor  # (T, B, C, H, W)
    actions: torch.Tensor  # (T, B) int64
    mask: torch.Tensor | None = None  # (T, B) 1.0 where a step is real

    @property
    def n_steps(self) -> float:
        if self.mask is None:
            return float(self.actions.numel())
        return float(self.mask.sum())


def bc_loss(net: RecurrentNet, batch: BcBatch):
    """Mean per-step negative log-likelihood of the recorded actions."""
    if batch.actions.numel() == 0:
        raise EmptyDatasetError("behavior cloning batch is empty")
    outputs, _ = net(batch.obs)
    logp = outputs["action"].gather(-1, batch.actions.unsqueeze(-1)).squeeze(-1)
    if batch.mask is not None:
        return -(logp * batch.mask).sum() / batch.mask.sum().clamp_min(1.0)
    return -logp.mean()


def bc_update(net: RecurrentNet, batch: BcBatch, optimizer) -> float:
    loss = bc_loss(net, batch)
    if not torch.isfinite(loss):
        raise TrainingDivergedError(f"non-finite BC loss {loss.item()}")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return loss.item()


@dataclass
class RolloutStats:
    mean_reward: float
    mean_shaped: float
    env_steps: int


def _sample_actions(logp: torch.Tensor, generator) -> torch.Tensor:
    return torch.multinomial(logp.exp(), 1, generator=generator).squeeze(-1)


def collect_selfplay(layout, net: RecurrentNet, n_envs: int, cfg: PpoConfig, seed: int,
                     shaping_weight: float = 0.0):
    """Roll n_envs episodes with the learner on both seats.

    Returns (RolloutBatch with 2*n_envs rows, RolloutStats). Rows 0..n-1 are
    seat 0 of each environment, rows n..2n-1 seat 1. Both seats receive the
    shared reward plus weighted shaping.
    """
    return _collect(layout, net, n_envs, cfg, seed, shaping_weight, partner_factory=None)


def collect_with_partner(layout, net: RecurrentNet, n_envs: int, cfg: PpoConfig, seed: int,
                         partner_factory, shaping_weight: float = 0.0):
    """Roll n_envs episodes against independent partner instances.

    partner_factory(episode_seed, player_index) -> agent with an
    act(state) -> action-name method. The learner alternates seats across
    environments; only learner rows enter the batch.
    """
    return _collect(layout, net, n_envs, cfg, seed, shaping_weight, partner_factory)


def _collect(layout, net, n_envs, cfg, seed, shaping_weight, partner_factory):
    torch_gen = torch.Generator().manual_seed(seed)
    selfplay = partner_factory is None
    rows = 2 * n_envs if selfplay else n_envs
    t_len = layout.episode_length

    states = [reset(layout, seed=seed + i) for i in range(n_envs)]
    if selfplay:
        seats = None
        partners = None
    else:
        seats = [i % 2 for i in range(n_envs)]  # learner's seat in env i
        seeds = np.random.SeedSequence([seed, 0xA5]).generate_state(n_envs)
        partners = [
            partner_factory(int(seeds[i]), 1 - seats[i]) for i in range(n_envs)
        ]

    obs_steps, act_steps, logp_steps, val_steps = [], [], [], []
    reward_steps = []
    total_reward = 0.0
    total_shaped = 0.0
    hidden = net.initial_state(rows)

    def learner_obs():
        if selfplay:
            arr = [observe(s, 0) for s in states] + [observe(s, 1) for s in states]
        else:
            arr = [observe(s, seats[i]) for i, s in enumerate(states)]
        return torch.from_numpy(np.stack(arr))

    for _ in range(t_len):
        obs = learner_obs()
        with torch.no_grad():
            outputs, hidden = net.step(obs, state=hidden)
            logp_all = outputs["action"]
            actions = _sample_actions(logp_all, torch_gen)
            logp = logp_all.gather(-1, actions.unsqueeze(-1)).squeeze(-1)
            values = outputs["value"].squeeze(-1)

        rewards = np.zeros(rows, dtype=np.float64)
        for i in range(n_envs):
            if selfplay:
                a = ACTIONS[actions[i]]
                b = ACTIONS[actions[n_envs + i]]
            else:
                mine = ACTIONS[actions[i]]
                theirs = partners[i].act(states[i])
                a, b = (mine, theirs) if seats[i] == 0 else (theirs, mine)
            states[i], r, shaped = step(states[i], a, b)
            total_reward += r
            total_shaped += shaped
            gain = r + shaping_weight * shaped
            if selfplay:
                rewards[i] = gain
                rewards[n_envs + i] = gain
            else:
                rewards[i] = gain

        obs_steps.append(obs)
        act_steps.append(actions)
        logp_steps.append(logp)
        val_steps.append(values.numpy())
        reward_steps.append(rewards)

    values_np = np.stack(val_steps + [np.zeros(rows)])  # episodes end: bootstrap 0
    rewards_np = np.stack(reward_steps)
    advantages, returns = gae(rewards_np, values_np, cfg.discount, cfg.gae_lambda)

    batch = RolloutBatch(
        obs=torch.stack(obs_steps),
        actions=torch.stack(act_steps),
        log_probs=torch.stack(logp_steps),
        advantages=torch.from_numpy(advantages).float(),
        returns=torch.from_numpy(returns).float(),
    )
    stats = RolloutStats(
        mean_reward=total_reward / n_envs,
        mean_shaped=total_shaped / n_envs,
        env_steps=n_envs * t_len,
    )
    return batch, stats
