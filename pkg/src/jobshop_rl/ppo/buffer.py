"""Rollout storage and generalized advantage estimation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RolloutBuffer:
    """Transitions of one collection phase, shape ``(T, E)`` for E environments.

    ``next_values[t]`` is the bootstrap for step ``t``: the critic value of the
    following state, the value of the final state on truncation, and 0 on a
    true terminal.  ``episode_end`` cuts the advantage recursion.
    """

    obs: np.ndarray
    masks: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    truncateds: np.ndarray
    next_values: np.ndarray = field(default=None)

    @classmethod
    def empty(cls, n_steps: int, n_envs: int, obs_dim: int, n_actions: int) -> "RolloutBuffer":
        return cls(
            np.zeros((n_steps, n_envs, obs_dim)),
            np.zeros((n_steps, n_envs, n_actions), dtype=bool),
            np.zeros((n_steps, n_envs), dtype=np.int64),
            np.zeros((n_steps, n_envs)),
            np.zeros((n_steps, n_envs)),
            np.zeros((n_steps, n_envs)),
            np.zeros((n_steps, n_envs), dtype=bool),
            np.zeros((n_steps, n_envs), dtype=bool),
            np.zeros((n_steps, n_envs)),
        )

    @property
    def episode_end(self) -> np.ndarray:
        return self.dones | self.truncateds

    def __len__(self) -> int:
        return self.rewards.shape[0]


def compute_advantages(buffer: RolloutBuffer, gamma: float, gae_lambda: float) -> tuple[np.ndarray, np.ndarray]:
    """GAE advantages and value targets (``advantages + values``), unnormalised."""
    if len(buffer) == 0:
        raise ValueError("empty rollout buffer")
    rewards = np.asarray(buffer.rewards, dtype=np.float64)
    values = np.asarray(buffer.values, dtype=np.float64)
    next_values = np.asarray(buffer.next_values, dtype=np.float64)
    ends = np.asarray(buffer.episode_end)
    terminal = np.asarray(buffer.dones)
    adv = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * next_values[t] * (1.0 - terminal[t]) - values[t]
        running = delta + gamma * gae_lambda * (1.0 - ends[t]) * running
        adv[t] = running
    return adv, adv + values
