"""Discrete-event job-shop environment.

The agent is only queried at decision points: clock times at which at least
one job's next operation can start on an idle machine.  Each query assigns
one job (a sub-action); the agent is re-queried at the same clock until no
job is eligible, then the clock jumps straight to the earliest future
completion time that makes some job eligible again.  There is no idle
action, so every reachable schedule is non-delay.

Reward: +1 per valid assignment, 0 for an ineligible action (state left
untouched), and on completion an extra ``(rollout_budget + 100 - makespan) *
final_reward_scale``.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .instance import Instance

FINAL_REWARD_OFFSET = 100


class EnvError(RuntimeError):
    """Contract violation: stepping a finished episode, querying an incomplete schedule, ..."""


class DeadlockError(EnvError):
    pass


class ScheduleError(ValueError):
    """A schedule breaks one of the job-shop constraints."""


@dataclass(frozen=True)
class Assignment:
    job: int
    op: int
    machine: int
    start: int
    end: int


@dataclass
class Schedule:
    instance_name: str
    assignments: list[Assignment]

    @property
    def makespan(self) -> int:
        return max((a.end for a in self.assignments), default=0)

    def to_record(self) -> dict[str, Any]:
        rows = sorted(self.assignments, key=lambda a: (a.machine, a.start))
        return {
            "instance": self.instance_name,
            "makespan": self.makespan,
            "assignments": [
                {"job": a.job, "op": a.op, "machine": a.machine, "start": a.start, "end": a.end}
                for a in rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=1)

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "Schedule":
        return cls(
            record["instance"],
            [Assignment(a["job"], a["op"], a["machine"], a["start"], a["end"]) for a in record["assignments"]],
        )


def schedule_violations(schedule: Schedule, instance: Instance) -> list[str]:
    """All broken constraints of a complete schedule (empty list when valid).

    Checks: every operation scheduled exactly once with its own duration and
    machine (atomic ops, fixed routing), no overlap on a machine, and job
    precedence.
    """
    problems = []
    n, m = instance.n_jobs, instance.n_machines
    seen: dict[tuple[int, int], Assignment] = {}
    for a in schedule.assignments:
        if not (0 <= a.job < n and 0 <= a.op < m):
            problems.append(f"unknown operation {a}")
            continue
        if (a.job, a.op) in seen:
            problems.append(f"operation ({a.job},{a.op}) scheduled twice")
        seen[(a.job, a.op)] = a
        mc, d = instance.ops[a.job][a.op]
        if a.machine != mc:
            problems.append(f"operation ({a.job},{a.op}) on machine {a.machine}, routing says {mc}")
        if a.end - a.start != d:
            problems.append(f"operation ({a.job},{a.op}) interrupted or stretched: [{a.start},{a.end}) vs d={d}")
        if a.start < 0:
            problems.append(f"operation ({a.job},{a.op}) starts before 0")
    if len(seen) != n * m:
        problems.append(f"{len(seen)} of {n * m} operations scheduled")
    by_machine: dict[int, list[Assignment]] = {}
    for a in seen.values():
        by_machine.setdefault(a.machine, []).append(a)
    for mc, rows in by_machine.items():
        rows.sort(key=lambda a: a.start)
        for prev, nxt in zip(rows, rows[1:]):
            if nxt.start < prev.end:
                problems.append(f"machine {mc}: jobs {prev.job} and {nxt.job} overlap")
    for j in range(n):
        for k in range(1, m):
            prev, cur = seen.get((j, k - 1)), seen.get((j, k))
            if prev and cur and cur.start < prev.end:
                problems.append(f"job {j}: op {k} starts before op {k - 1} ends")
    return problems


def check_schedule(schedule: Schedule, instance: Instance) -> None:
    problems = schedule_violations(schedule, instance)
    if problems:
        raise ScheduleError("; ".join(problems))


@dataclass
class EnvConfig:
    """Episode settings.

    ``rollout_budget=None`` derives the budget at reset as twice the best
    SPT/MWKR/FIFO/LPT makespan on the instance being played.
    ``invalid_action_limit=None`` means ``10 * n * m``.
    """

    rollout_budget: int | None = None
    final_reward_scale: float = 1.0
    final_reward_offset: int = FINAL_REWARD_OFFSET
    occupancy_threshold: float | None = None
    occupancy_warmup: float = 0.1
    invalid_action_limit: int | None = None
    record_trace: bool = False

    def __post_init__(self) -> None:
        if self.occupancy_threshold is not None and not 0.0 <= self.occupancy_threshold <= 1.0:
            raise ValueError(f"occupancy_threshold must lie in [0, 1], got {self.occupancy_threshold}")
        if self.rollout_budget is not None and self.rollout_budget <= 0:
            raise ValueError("rollout_budget must be positive")


@dataclass
class SimState:
    clock: int
    machine_busy_until: list[int]
    machine_current_job: list[int | None]
    job_next_op: list[int]
    job_ready_at: list[int]
    assignments: list[Assignment] = field(default_factory=list)
    busy_time_accum: list[int] = field(default_factory=list)
    episode_step_count: int = 0
    invalid_action_count: int = 0

    @classmethod
    def initial(cls, n_jobs: int, n_machines: int) -> "SimState":
        return cls(0, [0] * n_machines, [None] * n_machines, [0] * n_jobs, [0] * n_jobs, [], [0] * n_machines)


@dataclass
class Observation:
    machine_status: np.ndarray
    operation_progress: np.ndarray
    jobs_remaining: np.ndarray
    operation_matrix: np.ndarray
    job_available: np.ndarray
    machine_processing: np.ndarray
    action_mask: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        """Flat float vector of the six state components (mask excluded)."""
        return np.concatenate([
            self.machine_status,
            self.operation_progress,
            self.jobs_remaining,
            self.operation_matrix.ravel(),
            self.job_available,
            self.machine_processing,
        ]).astype(np.float64)


def observation_size(n_jobs: int, n_machines: int) -> int:
    return 3 * n_machines + 2 * n_jobs + n_jobs * n_machines


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    truncated: bool
    info: dict[str, Any]


# --------------------------------------------------------------------------
# engine primitives
# --------------------------------------------------------------------------

def eligible_jobs(state: SimState, instance: Instance, at: int | None = None) -> list[bool]:
    """Jobs whose next op could start at ``at`` (default: the current clock)."""
    t = state.clock if at is None else at
    m = instance.n_machines
    out = []
    for j, k in enumerate(state.job_next_op):
        if k >= m or state.job_ready_at[j] > t:
            out.append(False)
        else:
            out.append(state.machine_busy_until[instance.ops[j][k][0]] <= t)
    return out


def advance_clock(state: SimState, instance: Instance) -> int:
    """Jump to the earliest running-op completion that makes some job eligible.

    Completion times with nothing eligible are skipped.  Machines whose op
    has finished by the new clock are marked idle.
    """
    if any(eligible_jobs(state, instance)):
        raise EnvError("advance_clock called while jobs are eligible")
    candidates = sorted({t for t in state.machine_busy_until if t > state.clock})
    for t in candidates:
        if any(eligible_jobs(state, instance, at=t)):
            break
    else:
        raise DeadlockError(f"no running operation can unblock the schedule at clock {state.clock}")
    state.clock = t
    for i, until in enumerate(state.machine_busy_until):
        if until <= t:
            state.machine_busy_until[i] = 0
            state.machine_current_job[i] = None
    return t


def final_reward(schedule_makespan: int, config: EnvConfig, rollout_budget: int | None = None) -> float:
    budget = config.rollout_budget if rollout_budget is None else rollout_budget
    if budget is None:
        raise EnvError("final reward needs a rollout budget")
    return (budget + config.final_reward_offset - schedule_makespan) * config.final_reward_scale


def occupancy(state: SimState) -> float:
    """Fraction of machine time spent busy inside ``[0, clock)``."""
    if state.clock <= 0:
        return 1.0
    busy = 0
    for i, acc in enumerate(state.busy_time_accum):
        busy += acc - max(0, state.machine_busy_until[i] - state.clock)
    return busy / (len(state.busy_time_accum) * state.clock)


def makespan(state: SimState, instance: Instance | None = None) -> int:
    if instance is not None and len(state.assignments) != instance.n_ops:
        raise EnvError(f"schedule incomplete: {len(state.assignments)} of {instance.n_ops} operations")
    if not state.assignments:
        raise EnvError("no operations assigned")
    return max(a.end for a in state.assignments)


def machine_timeline_makespan(state: SimState, n_machines: int) -> int:
    """Makespan as max over machines of busy time plus idle gaps."""
    best = 0
    for mc in range(n_machines):
        rows = sorted((a for a in state.assignments if a.machine == mc), key=lambda a: a.start)
        t = busy = idle = 0
        for a in rows:
            idle += a.start - t
            busy += a.end - a.start
            t = a.end
        best = max(best, busy + idle)
    return best


# --------------------------------------------------------------------------
# environment
# --------------------------------------------------------------------------

def default_rollout_budget(instance: Instance) -> int:
    from .rules import best_rule_makespan

    return 2 * best_rule_makespan(instance)


class JobShopEnv:
    """Single-owner mutable environment over one instance at a time.

    >>> from jobshop_rl.instance import parse_standard
    >>> env = JobShopEnv(parse_standard("2 3\\n2 10 0 27 1 14\\n1 20 2 12 0 12"))
    >>> env.reset().action_mask.tolist()
    [True, True]
    """

    def __init__(self, instance: Instance, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self.instance = instance
        self.state = SimState.initial(instance.n_jobs, instance.n_machines)
        self.done = False
        self.truncated = False
        self.rollout_budget = 0
        self.invalid_limit = 0
        self.trace: list[dict[str, Any]] = []
        self._mask: list[bool] = []

    # ---- episode control -------------------------------------------------

    def reset(self, instance: Instance | None = None) -> Observation:
        if instance is not None:
            if (instance.n_jobs, instance.n_machines) != (self.instance.n_jobs, self.instance.n_machines):
                raise EnvError("reset instance must keep the environment's size")
            self.instance = instance
        inst = self.instance
        cfg = self.config
        self.state = SimState.initial(inst.n_jobs, inst.n_machines)
        self.done = self.truncated = False
        self.rollout_budget = cfg.rollout_budget if cfg.rollout_budget is not None else default_rollout_budget(inst)
        self.invalid_limit = cfg.invalid_action_limit if cfg.invalid_action_limit is not None else 10 * inst.n_ops
        self._dur_norm = float(inst.max_duration)
        self.trace = []
        self._mask = eligible_jobs(self.state, inst)
        return self.observe()

    @property
    def finished(self) -> bool:
        return self.done or self.truncated

    @property
    def action_mask(self) -> np.ndarray:
        return np.array(self._mask, dtype=bool)

    def step(self, action: int) -> StepResult:
        if self.finished:
            raise EnvError("episode already finished; call reset()")
        st, inst, cfg = self.state, self.instance, self.config
        st.episode_step_count += 1
        clock_before = st.clock
        mask_before = self._mask
        action = int(action)
        valid = 0 <= action < inst.n_jobs and self._mask[action]
        reward = 0.0
        if not valid:
            st.invalid_action_count += 1
            if st.invalid_action_count > self.invalid_limit:
                self.truncated = True
        else:
            reward = 1.0
            k = st.job_next_op[action]
            mc, d = inst.ops[action][k]
            end = st.clock + d
            st.assignments.append(Assignment(action, k, mc, st.clock, end))
            st.machine_busy_until[mc] = end
            st.machine_current_job[mc] = action
            st.job_next_op[action] = k + 1
            st.job_ready_at[action] = end
            st.busy_time_accum[mc] += d
            if len(st.assignments) == inst.n_ops:
                self.done = True
                reward += final_reward(makespan(st), cfg, self.rollout_budget)
            else:
                self._mask = eligible_jobs(st, inst)
                if not any(self._mask):
                    advance_clock(st, inst)
                    self._mask = eligible_jobs(st, inst)
                    self._check_truncation()
        if self.done:
            self._mask = [False] * inst.n_jobs
        obs = self.observe()
        if cfg.record_trace:
            self.trace.append({"clock": clock_before, "mask": list(mask_before), "action": action, "reward": reward})
        info = {
            "clock": st.clock,
            "makespan": max((a.end for a in st.assignments), default=0),
            "occupancy": occupancy(st),
            "invalid": not valid,
        }
        return StepResult(obs, reward, self.done, self.truncated, info)

    def _check_truncation(self) -> None:
        st, cfg = self.state, self.config
        if st.clock > self.rollout_budget:
            self.truncated = True
        elif (
            cfg.occupancy_threshold is not None
            and st.clock >= cfg.occupancy_warmup * self.rollout_budget
            and occupancy(st) < cfg.occupancy_threshold
        ):
            self.truncated = True

    # ---- views -----------------------------------------------------------

    def observe(self) -> Observation:
        st, inst = self.state, self.instance
        n, m = inst.n_jobs, inst.n_machines
        t = st.clock
        status = np.zeros(m)
        progress = np.zeros(m)
        processing = np.zeros(m)
        for i in range(m):
            until = st.machine_busy_until[i]
            if until > t:
                status[i] = 1.0
                progress[i] = (until - t) / self._dur_norm
                processing[i] = (st.machine_current_job[i] + 1) / n
        nxt = np.array(st.job_next_op)
        remaining = (m - nxt) / m
        opmat = (np.arange(m)[None, :] < nxt[:, None]).astype(np.float64)
        avail = np.array(self._mask, dtype=np.float64)
        return Observation(status, progress, remaining, opmat, avail, processing, avail.astype(bool))

    def schedule(self) -> Schedule:
        return Schedule(self.instance.name, list(self.state.assignments))

    def makespan(self) -> int:
        return makespan(self.state, self.instance)

    def occupancy(self) -> float:
        return occupancy(self.state)

    def clone(self) -> "JobShopEnv":
        return copy.deepcopy(self)

    def snapshot(self) -> dict[str, Any]:
        """JSON-friendly dump of the live episode (see :meth:`restore`)."""
        st = self.state
        return {
            "instance": {"name": self.instance.name, "ops": [list(map(list, job)) for job in self.instance.ops]},
            "clock": st.clock,
            "machine_busy_until": list(st.machine_busy_until),
            "machine_current_job": list(st.machine_current_job),
            "job_next_op": list(st.job_next_op),
            "job_ready_at": list(st.job_ready_at),
            "assignments": [[a.job, a.op, a.machine, a.start, a.end] for a in st.assignments],
            "busy_time_accum": list(st.busy_time_accum),
            "episode_step_count": st.episode_step_count,
            "invalid_action_count": st.invalid_action_count,
            "done": self.done,
            "truncated": self.truncated,
            "rollout_budget": self.rollout_budget,
            "invalid_limit": self.invalid_limit,
            "mask": list(self._mask),
        }

    def restore(self, snap: dict[str, Any]) -> None:
        inst = Instance.from_lists(snap["instance"]["name"], [[tuple(p) for p in job] for job in snap["instance"]["ops"]])
        self.instance = inst
        self.state = SimState(
            snap["clock"],
            list(snap["machine_busy_until"]),
            list(snap["machine_current_job"]),
            list(snap["job_next_op"]),
            list(snap["job_ready_at"]),
            [Assignment(*a) for a in snap["assignments"]],
            list(snap["busy_time_accum"]),
            snap["episode_step_count"],
            snap["invalid_action_count"],
        )
        self.done, self.truncated = snap["done"], snap["truncated"]
        self.rollout_budget, self.invalid_limit = snap["rollout_budget"], snap["invalid_limit"]
        self._dur_norm = float(inst.max_duration)
        self._mask = list(snap["mask"])


def run_actions(instance: Instance, actions: Sequence[int], config: EnvConfig | None = None) -> JobShopEnv:
    """Replay an action sequence from reset; returns the environment afterwards."""
    env = JobShopEnv(instance, config or EnvConfig(rollout_budget=instance.total_work))
    env.reset()
    for a in actions:
        env.step(a)
    return env
