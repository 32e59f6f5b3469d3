"""Order swapping: episode-wise perturbation of job routings during training.

The number of swaps grows linearly with the count of finished episodes::

    swaps = floor(T_p * (n * m) / 100 * tau)

Each swap exchanges two whole ``(machine, duration)`` operations of one
job, so every perturbed instance is still a valid job shop.  Swaps are
always drawn against the pristine base instance.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .instance import Instance

TAU_WARN = 0.015


@dataclass
class OsmConfig:
    tau: float = 0.00667
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.tau < 0:
            raise ValueError(f"tau must be non-negative, got {self.tau}")
        if self.enabled and self.tau > TAU_WARN:
            warnings.warn(
                f"tau={self.tau} exceeds {TAU_WARN}; heavy order swapping tends to stop training from converging",
                stacklevel=2,
            )

    @classmethod
    def off(cls) -> "OsmConfig":
        return cls(tau=0.0, enabled=False)

    @property
    def active(self) -> bool:
        return self.enabled and self.tau > 0


@dataclass
class OsmState:
    base_instance: Instance
    training_phase: int = 0


def max_swaps(instance: Instance) -> int:
    return instance.n_jobs * (instance.n_machines - 1)


def swap_count(state: OsmState, config: OsmConfig, instance: Instance | None = None) -> int:
    """Swaps to apply for the next episode, clamped to ``n * (m - 1)``."""
    if not config.enabled:
        return 0
    inst = instance or state.base_instance
    # exact rational arithmetic: tau is taken at its decimal value
    raw = Fraction(state.training_phase * inst.n_jobs * inst.n_machines, 100) * Fraction(repr(float(config.tau)))
    return min(math.floor(raw), max_swaps(inst))


def sample_swaps(base: Instance, k_swaps: int, seed) -> list[tuple[int, int, int]]:
    """``k_swaps`` random ``(job, pos_a, pos_b)`` transpositions, ``pos_a < pos_b``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    m = base.n_machines
    if m < 2:
        return []
    out = []
    for _ in range(k_swaps):
        j = int(rng.integers(base.n_jobs))
        a, b = rng.choice(m, size=2, replace=False)
        out.append((j, int(min(a, b)), int(max(a, b))))
    return out


def apply_swaps(base: Instance, swaps: list[tuple[int, int, int]], name: str | None = None) -> Instance:
    jobs = [list(job) for job in base.ops]
    for j, a, b in swaps:
        jobs[j][a], jobs[j][b] = jobs[j][b], jobs[j][a]
    return Instance.from_lists(name or base.name, jobs)


def perturb(base_instance: Instance, k_swaps: int, seed) -> Instance:
    """Copy of ``base_instance`` with ``k_swaps`` random within-job transpositions."""
    if k_swaps < 0:
        raise ValueError("k_swaps must be >= 0")
    if k_swaps == 0:
        return base_instance
    return apply_swaps(base_instance, sample_swaps(base_instance, k_swaps, seed))


def on_episode_end(state: OsmState) -> None:
    state.training_phase += 1


def tau_for_swap_level(level: float, instance: Instance, total_steps: int) -> float:
    """Execution rate giving ``level * n * m`` swaps by the end of a run.

    Assumes episodes of exactly ``n * m`` queries (no invalid actions), so
    ``T_p`` reaches ``total_steps / (n * m)``.
    """
    final_phase = total_steps / instance.n_ops
    if final_phase <= 0:
        raise ValueError("total_steps must be positive")
    return 100.0 * level / final_phase
