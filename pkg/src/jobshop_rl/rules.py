"""Priority dispatching baselines and exhaustive oracles for tiny instances."""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from functools import lru_cache

from .env import Assignment, EnvConfig, JobShopEnv, Schedule, SimState, advance_clock, eligible_jobs
from .instance import Instance


class RuleKind(str, enum.Enum):
    SPT = "spt"
    LPT = "lpt"
    FIFO = "fifo"
    MWKR = "mwkr"
    RANDOM = "random"


class TieBreak(str, enum.Enum):
    LOWEST_JOB_ID = "lowest_job_id"
    RANDOM = "random"


@dataclass(frozen=True)
class Rule:
    kind: RuleKind
    tie_break: TieBreak = TieBreak.LOWEST_JOB_ID
    seed: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", RuleKind(self.kind))
        object.__setattr__(self, "tie_break", TieBreak(self.tie_break))

    @classmethod
    def parse(cls, text: str, seed: int | None = None) -> "Rule":
        kind = RuleKind(text.strip().lower())
        if kind is RuleKind.RANDOM:
            return cls(kind, TieBreak.LOWEST_JOB_ID, seed)
        return cls(kind, seed=seed)


def _priority(kind: RuleKind, env: JobShopEnv, j: int) -> float:
    """Larger is preferred."""
    st, inst = env.state, env.instance
    k = st.job_next_op[j]
    if kind is RuleKind.SPT:
        return -inst.ops[j][k][1]
    if kind is RuleKind.LPT:
        return inst.ops[j][k][1]
    if kind is RuleKind.FIFO:
        return -st.job_ready_at[j]
    if kind is RuleKind.MWKR:
        return inst.remaining_work[j][k]
    raise ValueError(kind)


def choose(rule: Rule, env: JobShopEnv, rng: random.Random | None = None) -> int:
    """The job ``rule`` dispatches at the environment's current decision point."""
    mask = env.action_mask
    candidates = [j for j in range(len(mask)) if mask[j]]
    if not candidates:
        raise ValueError("no eligible job")
    if rule.kind is RuleKind.RANDOM:
        return rng.choice(candidates)
    prio = {j: _priority(rule.kind, env, j) for j in candidates}
    best = max(prio.values())
    tied = [j for j in candidates if prio[j] == best]
    if rule.tie_break is TieBreak.RANDOM and len(tied) > 1:
        return rng.choice(tied)
    return tied[0]


def dispatch(instance: Instance, rule: Rule | str, seed: int | None = None) -> Schedule:
    """Run one episode choosing jobs by ``rule``; returns the finished schedule."""
    if isinstance(rule, str):
        rule = Rule.parse(rule, seed)
    rng = random.Random(rule.seed if rule.seed is not None else seed)
    env = JobShopEnv(instance, EnvConfig(rollout_budget=instance.total_work))
    env.reset()
    while not env.finished:
        env.step(choose(rule, env, rng))
    if not env.done:
        raise RuntimeError(f"dispatch episode truncated on {instance.name}")
    return env.schedule()


BUDGET_RULES = (RuleKind.SPT, RuleKind.MWKR, RuleKind.FIFO, RuleKind.LPT)


@lru_cache(maxsize=4096)
def best_rule_makespan(instance: Instance) -> int:
    """Best makespan among the deterministic SPT/MWKR/FIFO/LPT rules."""
    return min(dispatch(instance, Rule(k)).makespan for k in BUDGET_RULES)


# --------------------------------------------------------------------------
# exhaustive oracles
# --------------------------------------------------------------------------

class InstanceTooLarge(ValueError):
    pass


def _copy_state(st: SimState) -> SimState:
    return SimState(
        st.clock,
        st.machine_busy_until[:],
        st.machine_current_job[:],
        st.job_next_op[:],
        st.job_ready_at[:],
        st.assignments[:],
        st.busy_time_accum[:],
    )


def _bound(st: SimState, inst: Instance, machine_left: list[int]) -> int:
    """Admissible completion bound of a partial non-delay schedule."""
    lb = max((a.end for a in st.assignments), default=0)
    for j, k in enumerate(st.job_next_op):
        if k < inst.n_machines:
            lb = max(lb, max(st.job_ready_at[j], st.clock) + inst.remaining_work[j][k])
    for i, left in enumerate(machine_left):
        if left:
            lb = max(lb, max(st.machine_busy_until[i], st.clock) + left)
    return lb


def brute_force_optimum(instance: Instance, limit: int = 12) -> tuple[int, Schedule]:
    """Minimum makespan over every action sequence the environment accepts.

    Depth-first over the eligible sets with bound pruning; the result is the
    best *non-delay* schedule, which is what the environment can reach.
    """
    if instance.n_ops > limit:
        raise InstanceTooLarge(f"{instance.name}: {instance.n_ops} operations exceed the limit of {limit}")
    m = instance.n_machines
    best = [instance.total_work + 1, None]
    machine_left = list(instance.machine_loads)

    def dfs(st: SimState) -> None:
        if len(st.assignments) == instance.n_ops:
            span = max(a.end for a in st.assignments)
            if span < best[0]:
                best[0], best[1] = span, list(st.assignments)
            return
        if _bound(st, instance, machine_left) >= best[0]:
            return
        for j, ok in enumerate(eligible_jobs(st, instance)):
            if not ok:
                continue
            nxt = _copy_state(st)
            k = nxt.job_next_op[j]
            mc, d = instance.ops[j][k]
            end = nxt.clock + d
            nxt.assignments.append(Assignment(j, k, mc, nxt.clock, end))
            nxt.machine_busy_until[mc] = end
            nxt.machine_current_job[mc] = j
            nxt.job_next_op[j] = k + 1
            nxt.job_ready_at[j] = end
            machine_left[mc] -= d
            if len(nxt.assignments) < instance.n_ops and not any(eligible_jobs(nxt, instance)):
                advance_clock(nxt, instance)
            dfs(nxt)
            machine_left[mc] += d

    dfs(SimState.initial(instance.n_jobs, m))
    return best[0], Schedule(instance.name, best[1])


def active_schedule_optimum(instance: Instance, limit: int = 9) -> tuple[int, Schedule]:
    """Unrestricted optimum via Giffler-Thompson enumeration of active schedules.

    Active schedules may delay an operation so that a later-arriving one goes
    first; the set always contains an optimal schedule.
    """
    if instance.n_ops > limit:
        raise InstanceTooLarge(f"{instance.name}: {instance.n_ops} operations exceed the limit of {limit}")
    n, m = instance.n_jobs, instance.n_machines
    best = [instance.total_work + 1, None]

    def dfs(nxt_op, job_free, mach_free, rows, span):
        if len(rows) == instance.n_ops:
            if span < best[0]:
                best[0], best[1] = span, rows
            return
        bound = span
        for j in range(n):
            k = nxt_op[j]
            if k < m:
                bound = max(bound, job_free[j] + instance.remaining_work[j][k])
        if bound >= best[0]:
            return
        open_jobs = [j for j in range(n) if nxt_op[j] < m]

        def est(j):
            return max(job_free[j], mach_free[instance.ops[j][nxt_op[j]][0]])

        ect = {j: est(j) + instance.ops[j][nxt_op[j]][1] for j in open_jobs}
        jstar = min(open_jobs, key=lambda j: (ect[j], j))
        cstar, mstar = ect[jstar], instance.ops[jstar][nxt_op[jstar]][0]
        for j in open_jobs:
            mc, d = instance.ops[j][nxt_op[j]]
            if mc != mstar or est(j) >= cstar:
                continue
            s = est(j)
            a = Assignment(j, nxt_op[j], mc, s, s + d)
            no, jf, mf = nxt_op[:], job_free[:], mach_free[:]
            no[j] += 1
            jf[j] = mf[mc] = s + d
            dfs(no, jf, mf, rows + [a], max(span, s + d))

    dfs([0] * n, [0] * n, [0] * m, [], 0)
    return best[0], Schedule(instance.name, best[1])


@dataclass(frozen=True)
class NonDelayGap:
    non_delay_optimum: int
    active_optimum: int

    @property
    def gap(self) -> int:
        return self.non_delay_optimum - self.active_optimum


def non_delay_gap(instance: Instance, limit: int = 9) -> NonDelayGap:
    """How much the environment's no-idle restriction costs on a tiny instance."""
    nd, _ = brute_force_optimum(instance, limit=max(limit, instance.n_ops))
    act, _ = active_schedule_optimum(instance, limit=limit)
    return NonDelayGap(nd, act)
