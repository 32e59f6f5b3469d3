"""Masked categorical policy and the clipped PPO loss with analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import PolicyParams


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-probabilities with ineligible entries at ``-inf``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("mask has no eligible action")
    z = np.where(mask, logits, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return shifted - lse


def sample_masked(logits: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    logp = masked_log_softmax(logits, mask)
    p = np.exp(logp)
    u = rng.random()
    a = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
    a = min(a, len(p) - 1)
    while not mask[a]:  # u landed on the float edge past the last eligible entry
        a -= 1
    return a, float(logp[a])


def greedy_masked(logits: np.ndarray, mask: np.ndarray) -> int:
    return int(np.argmax(np.where(mask, logits, -np.inf)))


@dataclass
class Batch:
    obs: np.ndarray
    masks: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    def subset(self, idx: np.ndarray) -> "Batch":
        return Batch(*(getattr(self, f)[idx] for f in ("obs", "masks", "actions", "old_log_probs", "advantages", "returns")))


@dataclass
class LossParts:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float
    surrogate: np.ndarray
    unclipped: np.ndarray
    ratio: np.ndarray


def ppo_loss(
    params: PolicyParams,
    batch: Batch,
    clip_epsilon: float,
    value_coef: float,
    entropy_coef: float,
    with_grad: bool = True,
) -> tuple[LossParts, list[np.ndarray] | None]:
    """Loss to *minimise*: ``-L_clip + value_coef * MSE - entropy_coef * H``.

    Gradients follow :meth:`PolicyParams.arrays` order.  The clip term uses
    the one-sided derivative: zero where the clipped branch is the minimum
    and the ratio lies outside ``[1 - eps, 1 + eps]``.
    """
    x = batch.obs.astype(params.dtype, copy=False)
    bsz = len(batch)
    rows = np.arange(bsz)
    logits, a_acts = params.actor.forward(x)
    value_out, c_acts = params.critic.forward(x)
    values = value_out[:, 0]

    logp_all = masked_log_softmax(logits, batch.masks)
    p = np.exp(logp_all)
    logp = logp_all[rows, batch.actions]
    ratio = np.exp(logp - batch.old_log_probs)
    adv = batch.advantages
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv
    surrogate = np.minimum(unclipped, clipped)
    plogp = np.where(batch.masks, p * np.where(batch.masks, logp_all, 0.0), 0.0)
    entropy = -plogp.sum(axis=1)
    err = values - batch.returns

    policy_loss = -surrogate.mean()
    value_loss = float((err ** 2).mean())
    ent = float(entropy.mean())
    loss = policy_loss + value_coef * value_loss - entropy_coef * ent
    parts = LossParts(
        float(loss),
        float(policy_loss),
        value_loss,
        ent,
        float((np.abs(ratio - 1.0) > clip_epsilon).mean()),
        float(((ratio - 1.0) - np.log(ratio)).mean()),
        surrogate,
        unclipped,
        ratio,
    )
    if not with_grad:
        return parts, None

    # d(surrogate)/d(ratio): adv on the active unclipped branch, else 0
    active = unclipped <= clipped
    d_logp = -np.where(active, adv, 0.0) * ratio / bsz
    onehot = np.zeros_like(p)
    onehot[rows, batch.actions] = 1.0
    d_logits = d_logp[:, None] * (onehot - p)
    # entropy: dH/dz_k = -p_k (log p_k + H)
    safe_logp = np.where(batch.masks, logp_all, 0.0)
    d_h = -p * (safe_logp + entropy[:, None])
    d_logits += (-entropy_coef / bsz) * d_h
    d_value = (value_coef * 2.0 / bsz) * err

    actor_grads, _ = params.actor.backward(a_acts, d_logits.astype(params.dtype, copy=False))
    critic_grads, _ = params.critic.backward(c_acts, d_value[:, None].astype(params.dtype, copy=False))
    return parts, actor_grads + critic_grads
