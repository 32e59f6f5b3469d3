"""Actor and critic MLPs with hand-written backpropagation.

Both networks are ``obs -> tanh(H) -> tanh(H) -> out``.  Parameters are
plain numpy arrays so gradients can be checked against finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HIDDEN = 256


def orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


@dataclass
class MLP:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, rng, sizes: list[int], out_gain: float, dtype=np.float64) -> "MLP":
        ws, bs = [], []
        for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
            gain = out_gain if i == len(sizes) - 2 else np.sqrt(2.0)
            ws.append(orthogonal(rng, a, b, gain).astype(dtype))
            bs.append(np.zeros(b, dtype=dtype))
        return cls(ws, bs)

    @classmethod
    def zeros(cls, sizes: list[int], dtype=np.float64) -> "MLP":
        return cls(
            [np.zeros((a, b), dtype=dtype) for a, b in zip(sizes, sizes[1:])],
            [np.zeros(b, dtype=dtype) for b in sizes[1:]],
        )

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns the output and the layer activations needed by :meth:`backward`."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts: list[np.ndarray], dout: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients ``[dW0, db0, dW1, ...]`` and the input gradient."""
        grads: list[np.ndarray] = []
        g = dout
        for i in range(len(self.weights) - 1, -1, -1):
            grads = [acts[i].T @ g, g.sum(axis=0)] + grads
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (1.0 - acts[i] ** 2)
        return grads, g


@dataclass
class PolicyParams:
    """Actor ``obs -> n_jobs logits`` and critic ``obs -> value``."""

    actor: MLP
    critic: MLP

    @classmethod
    def init(cls, obs_dim: int, n_actions: int, seed=0, hidden: int = HIDDEN, dtype=np.float64) -> "PolicyParams":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(
            MLP.init(rng, [obs_dim, hidden, hidden, n_actions], 0.01, dtype),
            MLP.init(rng, [obs_dim, hidden, hidden, 1], 1.0, dtype),
        )

    @classmethod
    def zeros(cls, obs_dim: int, n_actions: int, hidden: int = HIDDEN, dtype=np.float64) -> "PolicyParams":
        return cls(MLP.zeros([obs_dim, hidden, hidden, n_actions], dtype), MLP.zeros([obs_dim, hidden, hidden, 1], dtype))

    @property
    def obs_dim(self) -> int:
        return self.actor.weights[0].shape[0]

    @property
    def n_actions(self) -> int:
        return self.actor.weights[-1].shape[1]

    @property
    def dtype(self):
        return self.actor.weights[0].dtype

    def arrays(self) -> list[np.ndarray]:
        """Every parameter array, actor first; gradients use the same order."""
        return self.actor.arrays() + self.critic.arrays()

    def names(self) -> list[str]:
        out = []
        for net in ("actor", "critic"):
            for i in range(3):
                out += [f"{net}.w{i}", f"{net}.b{i}"]
        return out

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            MLP([w.copy() for w in self.actor.weights], [b.copy() for b in self.actor.biases]),
            MLP([w.copy() for w in self.critic.weights], [b.copy() for b in self.critic.biases]),
        )

    def astype(self, dtype) -> "PolicyParams":
        return PolicyParams(
            MLP([w.astype(dtype) for w in self.actor.weights], [b.astype(dtype) for b in self.actor.biases]),
            MLP([w.astype(dtype) for w in self.critic.weights], [b.astype(dtype) for b in self.critic.biases]),
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> "PolicyParams":
        a, c = arrays[:6], arrays[6:]
        return cls(MLP(a[0::2], a[1::2]), MLP(c[0::2], c[1::2]))


class ShapeMismatch(ValueError):
    pass


def policy_forward(params: PolicyParams, observation: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and state value for one observation vector or a batch of them."""
    x = np.asarray(observation, dtype=params.dtype)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != params.obs_dim:
        raise ShapeMismatch(f"observation has {x.shape[1]} features, network expects {params.obs_dim}")
    logits, _ = params.actor.forward(x)
    value, _ = params.critic.forward(x)
    if single:
        return logits[0], value[0, 0]
    return logits, value[:, 0]
