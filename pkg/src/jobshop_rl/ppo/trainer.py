"""PPO training loop over the job-shop environment."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np

from ..env import EnvConfig, JobShopEnv, Schedule, observation_size
from ..instance import Instance
from ..osm import OsmConfig, OsmState, on_episode_end, perturb, swap_count
from .buffer import RolloutBuffer, compute_advantages
from .loss import Batch, greedy_masked, ppo_loss, sample_masked
from .network import HIDDEN, PolicyParams, ShapeMismatch, policy_forward

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_FIELDS = ("step", "episode", "makespan", "reward", "ep_length", "occupancy", "lr", "clip_fraction", "approx_kl")


class TrainingDiverged(FloatingPointError):
    """A loss or parameter became non-finite.  ``diagnostics`` holds the last metrics."""

    def __init__(self, message: str, diagnostics: dict[str, Any]):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainerConfig:
    clip_epsilon: float = 0.2
    gamma: float = 0.966
    gae_lambda: float = 0.95
    lr_start: float = 1e-4
    lr_end: float = 1e-8
    n_steps: int | None = None  # None: default_n_steps(instance)
    minibatch_size: int = 64
    epochs_per_update: int = 10
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    total_steps: int = 1_000_000
    seed: int = 0
    n_envs: int = 1
    hidden: int = HIDDEN
    dtype: str = "float32"
    normalize_advantage: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.clip_epsilon < 1:
            raise ValueError(f"clip_epsilon must lie in (0, 1), got {self.clip_epsilon}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.lr_end > self.lr_start:
            raise ValueError("learning rate must decay: lr_end > lr_start")
        if self.n_envs < 1 or self.minibatch_size < 1 or self.epochs_per_update < 1:
            raise ValueError("n_envs, minibatch_size and epochs_per_update must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")


def lr_at(step: int, config: TrainerConfig) -> float:
    """Linear decay from ``lr_start`` at step 0 to ``lr_end`` at ``total_steps``."""
    frac = min(max(step / config.total_steps, 0.0), 1.0) if config.total_steps > 0 else 1.0
    return config.lr_start * (1.0 - frac) + config.lr_end * frac


def default_n_steps(instance: Instance) -> int:
    """Largest multiple of 64 not above two episodes' worth of queries (min 64)."""
    return max(64, (2 * instance.n_ops) // 64 * 64)


class Adam:
    def __init__(self, arrays: list[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-5):
        # float64 moments: float32 second moments decay into subnormals, which are very slow
        self.m = [np.zeros(a.shape) for a in arrays]
        self.v = [np.zeros(a.shape) for a in arrays]
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        step_size = lr / (1.0 - b1 ** self.t)
        root_c2 = np.sqrt(1.0 - b2 ** self.t)
        for p, g, m, v in zip(arrays, grads, self.m, self.v):
            tmp = np.multiply(g, 1.0 - b1, dtype=np.float64)
            m *= b1
            m += tmp
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - b2
            v *= b2
            v += tmp
            np.sqrt(v, out=tmp)
            tmp /= root_c2
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= step_size
            p -= tmp


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.dot(g.ravel(), g.ravel())) for g in grads)))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads:
            g *= scale
    return norm


def ppo_update(
    params: PolicyParams,
    batch: Batch,
    config: TrainerConfig,
    optimizer: Adam,
    rng: np.random.Generator,
    lr: float,
) -> tuple[PolicyParams, dict[str, float]]:
    """Several epochs of minibatch ascent on the clipped surrogate.

    ``batch.advantages`` are used as given; normalisation is the caller's
    job.  Returns fresh parameters and averaged metrics.
    """
    params = params.copy()
    arrays = params.arrays()
    eps = config.clip_epsilon
    n = len(batch)
    stats: dict[str, list[float]] = {k: [] for k in ("loss", "policy_loss", "value_loss", "entropy", "clip_fraction", "approx_kl", "grad_norm")}
    violations = 0
    first_objective_gap = None
    for epoch in range(config.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            mb = batch.subset(order[start:start + config.minibatch_size])
            parts, grads = ppo_loss(params, mb, eps, config.value_coef, config.entropy_coef)
            if not np.isfinite(parts.loss):
                raise TrainingDiverged(
                    f"non-finite loss in epoch {epoch}",
                    {"policy_loss": parts.policy_loss, "value_loss": parts.value_loss, "entropy": parts.entropy, "lr": lr},
                )
            if first_objective_gap is None:
                first_objective_gap = float(np.abs(parts.surrogate - parts.unclipped).max())
            adv = mb.advantages
            over = ((adv > 0) & (parts.surrogate > (1 + eps) * adv * (1 + 1e-9)))
            under = ((adv < 0) & (parts.surrogate > (1 - eps) * adv * (1 - 1e-9)))
            violations += int(over.sum() + under.sum())
            norm = clip_grad_norm(grads, config.max_grad_norm)
            optimizer.step(arrays, grads, lr)
            for k in ("loss", "policy_loss", "value_loss", "entropy", "clip_fraction", "approx_kl"):
                stats[k].append(getattr(parts, k))
            stats["grad_norm"].append(norm)
    if not params.is_finite():
        raise TrainingDiverged("parameters became non-finite", {k: float(np.mean(v)) for k, v in stats.items()})
    metrics = {k: float(np.mean(v)) for k, v in stats.items()}
    metrics["clip_bound_violations"] = violations
    metrics["first_step_objective_gap"] = first_objective_gap or 0.0
    metrics["lr"] = lr
    return params, metrics


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


class Trainer:
    """Owns the policy, optimiser, RNG streams, environments and logs of one run.

    RNG streams (parameter init, action sampling, order swapping, minibatch
    shuffling) are spawned independently from ``config.seed``.
    """

    def __init__(
        self,
        instance: Instance,
        env_config: EnvConfig | None = None,
        config: TrainerConfig | None = None,
        osm_config: OsmConfig | None = None,
    ):
        self.base_instance = instance
        self.env_config = env_config or EnvConfig()
        self.config = config or TrainerConfig()
        self.osm_config = osm_config or OsmConfig.off()
        cfg = self.config
        self.dtype = np.dtype(cfg.dtype)
        self.n_steps = cfg.n_steps or default_n_steps(instance)
        init_ss, act_ss, osm_ss, shuf_ss = np.random.SeedSequence(cfg.seed).spawn(4)
        self.obs_dim = observation_size(instance.n_jobs, instance.n_machines)
        self.params = PolicyParams.init(self.obs_dim, instance.n_jobs, np.random.default_rng(init_ss), cfg.hidden, self.dtype)
        self.optimizer = Adam(self.params.arrays())
        self.action_rng = np.random.default_rng(act_ss)
        self.osm_rng = np.random.default_rng(osm_ss)
        self.shuffle_rng = np.random.default_rng(shuf_ss)
        self.osm = OsmState(instance)
        self.step = 0
        self.episode = 0
        self.updates = 0
        self.rows: list[dict[str, Any]] = []
        self.best_makespan: int | None = None
        self.best_schedule: Schedule | None = None
        self.last_metrics: dict[str, float] = {}
        self.update_metrics: list[dict[str, float]] = []
        self.envs = [JobShopEnv(instance, self.env_config) for _ in range(cfg.n_envs)]
        self._ep_reward = [0.0] * cfg.n_envs
        for env in self.envs:
            env.reset(self._next_instance())

    # ---- episodes --------------------------------------------------------

    def _next_instance(self) -> Instance:
        if not self.osm_config.active:
            return self.base_instance
        k = swap_count(self.osm, self.osm_config, self.base_instance)
        return perturb(self.base_instance, k, self.osm_rng)

    def _end_episode(self, e: int, env: JobShopEnv) -> None:
        self.episode += 1
        span = env.makespan() if env.done else None
        if span is not None and (self.best_makespan is None or span < self.best_makespan):
            self.best_makespan = span
            self.best_schedule = env.schedule()
        self.rows.append({
            "step": self.step,
            "episode": self.episode,
            "makespan": span,
            "reward": self._ep_reward[e],
            "ep_length": env.state.episode_step_count,
            "occupancy": env.occupancy(),
            "lr": lr_at(self.step, self.config),
            "clip_fraction": self.last_metrics.get("clip_fraction"),
            "approx_kl": self.last_metrics.get("approx_kl"),
        })
        self._ep_reward[e] = 0.0
        on_episode_end(self.osm)
        env.reset(self._next_instance())

    def _obs_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        obs = [env.observe() for env in self.envs]
        return np.stack([o.vector for o in obs]), np.stack([o.action_mask for o in obs])

    def collect(self, n_steps: int) -> RolloutBuffer:
        E = len(self.envs)
        buf = RolloutBuffer.empty(n_steps, E, self.obs_dim, self.base_instance.n_jobs)
        x, masks = self._obs_matrix()
        for t in range(n_steps):
            logits, values = policy_forward(self.params, x)
            buf.obs[t] = x
            buf.masks[t] = masks
            buf.values[t] = values
            new_x, new_masks = x.copy(), masks.copy()
            for e, env in enumerate(self.envs):
                a, lp = sample_masked(logits[e].astype(np.float64), masks[e], self.action_rng)
                res = env.step(a)
                self.step += 1
                self._ep_reward[e] += res.reward
                buf.actions[t, e] = a
                buf.log_probs[t, e] = lp
                buf.rewards[t, e] = res.reward
                buf.dones[t, e] = res.done
                buf.truncateds[t, e] = res.truncated
                if res.truncated:
                    _, v = policy_forward(self.params, res.observation.vector)
                    buf.next_values[t, e] = v
                if env.finished:
                    self._end_episode(e, env)
                    o = env.observe()
                else:
                    o = res.observation
                new_x[e], new_masks[e] = o.vector, o.action_mask
            x, masks = new_x, new_masks
        _, last_values = policy_forward(self.params, x)
        follow = np.concatenate([buf.values[1:], last_values[None, :]])
        cont = ~buf.episode_end
        buf.next_values[cont] = follow[cont]
        return buf

    # ---- optimisation ----------------------------------------------------

    def update(self, buf: RolloutBuffer) -> dict[str, float]:
        cfg = self.config
        adv, ret = compute_advantages(buf, cfg.gamma, cfg.gae_lambda)
        flat = lambda a: a.reshape(-1, *a.shape[2:])  # noqa: E731
        adv = flat(adv)
        if cfg.normalize_advantage and len(adv) > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        batch = Batch(flat(buf.obs), flat(buf.masks), flat(buf.actions), flat(buf.log_probs), adv, flat(ret))
        lr = lr_at(self.step, cfg)
        self.params, metrics = ppo_update(self.params, batch, cfg, self.optimizer, self.shuffle_rng, lr)
        self.updates += 1
        metrics["update"] = self.updates
        metrics["step"] = self.step
        self.last_metrics = metrics
        self.update_metrics.append(metrics)
        return metrics

    def run(self, stop_at: int | None = None, callback: Callable[["Trainer"], None] | None = None) -> PolicyParams:
        """Train until ``total_steps`` (or the first update boundary at/after ``stop_at``)."""
        cfg = self.config
        target = cfg.total_steps if stop_at is None else min(stop_at, cfg.total_steps)
        E = len(self.envs)
        while self.step < target:
            per_env = min(self.n_steps // E or 1, -(-(cfg.total_steps - self.step) // E))
            buf = self.collect(per_env)
            self.update(buf)
            if callback is not None:
                callback(self)
            if self.updates % 50 == 0:
                log.info("step %d episodes %d best %s", self.step, self.episode, self.best_makespan)
        return self.params

    # ---- persistence -----------------------------------------------------

    def log_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for row in self.rows:
            w.writerow([_fmt(row[k]) for k in LOG_FIELDS])
        return out.getvalue()

    def write_log(self, path) -> None:
        Path(path).write_text(self.log_csv())

    def save(self, path) -> None:
        meta = {
            "version": CHECKPOINT_VERSION,
            "shapes": [list(a.shape) for a in self.params.arrays()],
            "trainer_config": asdict(self.config),
            "env_config": asdict(self.env_config),
            "osm_config": asdict(self.osm_config),
            "base_instance": {"name": self.base_instance.name, "ops": [list(map(list, j)) for j in self.base_instance.ops]},
            "rng": {
                "action": self.action_rng.bit_generator.state,
                "osm": self.osm_rng.bit_generator.state,
                "shuffle": self.shuffle_rng.bit_generator.state,
            },
            "step": self.step,
            "episode": self.episode,
            "updates": self.updates,
            "training_phase": self.osm.training_phase,
            "adam_t": self.optimizer.t,
            "envs": [env.snapshot() for env in self.envs],
            "ep_reward": self._ep_reward,
            "best_makespan": self.best_makespan,
            "best_schedule": self.best_schedule.to_record() if self.best_schedule else None,
            "last_metrics": self.last_metrics,
            "rows": self.rows,
        }
        arrays = {f"param.{k}": a for k, a in zip(self.params.names(), self.params.arrays())}
        arrays.update({f"adam_m.{k}": a for k, a in zip(self.params.names(), self.optimizer.m)})
        arrays.update({f"adam_v.{k}": a for k, a in zip(self.params.names(), self.optimizer.v)})
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path) -> "Trainer":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta['version']}")
            names = PolicyParams.zeros(1, 1, 1).names()
            params = [z[f"param.{k}"] for k in names]
            m = [z[f"adam_m.{k}"] for k in names]
            v = [z[f"adam_v.{k}"] for k in names]
        inst_d = meta["base_instance"]
        instance = Instance.from_lists(inst_d["name"], [[tuple(p) for p in job] for job in inst_d["ops"]])
        tr = cls(
            instance,
            EnvConfig(**meta["env_config"]),
            TrainerConfig(**meta["trainer_config"]),
            _quiet_osm(meta["osm_config"]),
        )
        tr.params = PolicyParams.from_arrays(params)
        tr.optimizer = Adam(tr.params.arrays())
        tr.optimizer.m, tr.optimizer.v, tr.optimizer.t = m, v, meta["adam_t"]
        tr.action_rng.bit_generator.state = meta["rng"]["action"]
        tr.osm_rng.bit_generator.state = meta["rng"]["osm"]
        tr.shuffle_rng.bit_generator.state = meta["rng"]["shuffle"]
        tr.step, tr.episode, tr.updates = meta["step"], meta["episode"], meta["updates"]
        tr.osm.training_phase = meta["training_phase"]
        for env, snap in zip(tr.envs, meta["envs"]):
            env.restore(snap)
        tr._ep_reward = meta["ep_reward"]
        tr.best_makespan = meta["best_makespan"]
        tr.best_schedule = Schedule.from_record(meta["best_schedule"]) if meta["best_schedule"] else None
        tr.last_metrics = meta["last_metrics"]
        tr.rows = meta["rows"]
        return tr


def _quiet_osm(d: dict[str, Any]) -> OsmConfig:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return OsmConfig(**d)


def train(
    instance: Instance,
    env_config: EnvConfig | None = None,
    trainer_config: TrainerConfig | None = None,
    osm_config: OsmConfig | None = None,
) -> tuple[PolicyParams, list[dict[str, Any]]]:
    tr = Trainer(instance, env_config, trainer_config, osm_config)
    tr.run()
    return tr.params, tr.rows


def load_params(path) -> PolicyParams:
    """Policy weights from a trainer checkpoint."""
    with np.load(path, allow_pickle=False) as z:
        names = PolicyParams.zeros(1, 1, 1).names()
        return PolicyParams.from_arrays([z[f"param.{k}"] for k in names])


@dataclass
class EvalResult:
    best_makespan: int
    mean_makespan: float
    schedule: Schedule
    mode: str
    makespans: list[int]


def evaluate(
    params: PolicyParams,
    instance: Instance,
    episodes: int = 1,
    mode: str = "greedy",
    seed: int = 0,
    env_config: EnvConfig | None = None,
) -> EvalResult:
    """Roll the policy out on ``instance``.

    ``greedy`` takes the arg-max eligible job (one episode, deterministic);
    ``sample`` draws ``episodes`` stochastic rollouts.  Episodes are never
    truncated by the rollout budget unless ``env_config`` asks for it.
    """
    if params.obs_dim != observation_size(instance.n_jobs, instance.n_machines) or params.n_actions != instance.n_jobs:
        raise ShapeMismatch(
            f"policy is shaped for obs_dim={params.obs_dim}, {params.n_actions} jobs; "
            f"instance {instance.name} is {instance.n_jobs}x{instance.n_machines}"
        )
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    cfg = env_config or EnvConfig(rollout_budget=instance.total_work)
    rng = np.random.default_rng(seed)
    spans, best = [], None
    for _ in range(1 if mode == "greedy" else episodes):
        env = JobShopEnv(instance, cfg)
        obs = env.reset()
        while not env.finished:
            logits, _ = policy_forward(params, obs.vector)
            if mode == "greedy":
                a = greedy_masked(logits, obs.action_mask)
            else:
                a, _ = sample_masked(logits.astype(np.float64), obs.action_mask, rng)
            obs = env.step(a).observation
        if not env.done:
            raise RuntimeError(f"evaluation episode on {instance.name} was truncated")
        span = env.makespan()
        spans.append(span)
        if best is None or span < best[0]:
            best = (span, env.schedule())
    return EvalResult(best[0], float(np.mean(spans)), best[1], mode, spans)


def config_fields(cls) -> list[str]:
    return [f.name for f in fields(cls)]
