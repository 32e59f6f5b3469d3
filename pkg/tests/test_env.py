import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jobshop_rl.env import (
    Assignment,
    EnvConfig,
    EnvError,
    JobShopEnv,
    Schedule,
    ScheduleError,
    SimState,
    advance_clock,
    check_schedule,
    default_rollout_budget,
    eligible_jobs,
    final_reward,
    makespan,
    occupancy,
    observation_size,
    run_actions,
    schedule_violations,
)
from jobshop_rl.instance import generate_random, lower_bound, parse_standard
from jobshop_rl.rules import best_rule_makespan


def greedy_lowest(env):
    return int(np.flatnonzero(env.action_mask)[0])


def test_initial_eligibility(worked):
    env = JobShopEnv(worked, EnvConfig(rollout_budget=100))
    obs = env.reset()
    assert obs.action_mask.tolist() == [True, True]
    assert obs.vector.shape == (observation_size(2, 3),)


def test_single_op_observation(single):
    obs = JobShopEnv(single, EnvConfig(rollout_budget=10)).reset()
    assert obs.action_mask.tolist() == [True]
    assert obs.jobs_remaining.tolist() == [1.0]


def test_first_step(worked):
    env = JobShopEnv(worked, EnvConfig(rollout_budget=100))
    env.reset()
    r = env.step(0)
    assert env.state.assignments == [Assignment(0, 0, 2, 0, 10)]
    assert r.reward == 1.0
    assert env.action_mask.tolist() == [False, True]
    assert env.state.clock == 0


def test_clock_jumps_to_ten_then_skips_32(worked):
    env = JobShopEnv(worked, EnvConfig(rollout_budget=100, record_trace=True))
    env.reset()
    env.step(0)
    env.step(1)
    assert env.state.clock == 10
    assert env.action_mask.tolist() == [True, False]
    env.step(0)
    assert env.state.clock == 20
    env.step(1)
    assert env.state.clock == 37
    while not env.finished:
        env.step(greedy_lowest(env))
    assert [t["clock"] for t in env.trace] == [0, 0, 10, 20, 37, 37]


def state_at_32():
    # J1 on M1 over [10, 37); J2 finished its M3 op at 32 and waits for M1
    return SimState(
        32, [37, 0, 0], [0, None, None], [2, 2], [37, 32],
        [Assignment(0, 0, 2, 0, 10), Assignment(1, 0, 1, 0, 20), Assignment(0, 1, 0, 10, 37), Assignment(1, 1, 2, 20, 32)],
        [27, 20, 22],
    )


def test_nothing_eligible_at_32(worked):
    assert eligible_jobs(state_at_32(), worked) == [False, False]


def test_invalid_action_keeps_clock(worked):
    env = JobShopEnv(worked, EnvConfig(rollout_budget=100))
    env.reset()
    env.state = state_at_32()
    env._mask = eligible_jobs(env.state, worked)
    before = list(env.state.assignments)
    r = env.step(1)
    assert r.reward == 0.0 and r.info["invalid"]
    assert env.state.clock == 32 and env.state.assignments == before


def test_greedy_episode(worked):
    env = JobShopEnv(worked, EnvConfig(rollout_budget=51))
    env.reset()
    dense, steps = 0.0, 0
    while not env.finished:
        r = env.step(greedy_lowest(env))
        dense += 1.0 if r.reward >= 1.0 else 0.0
        steps += 1
    assert env.done and not env.truncated
    assert steps == 6 and dense == 6
    assert env.makespan() == 51
    got = {(a.job, a.machine, a.start, a.end) for a in env.state.assignments}
    assert got == {(0, 2, 0, 10), (1, 1, 0, 20), (0, 0, 10, 37), (1, 2, 20, 32), (0, 1, 37, 51), (1, 0, 37, 49)}
    # the last step carries the final reward on top of the dense 1
    assert r.reward == 1.0 + 100


def test_single_candidate_jump():
    inst = parse_standard("1 2\n0 5 1 1\n")
    env = JobShopEnv(inst, EnvConfig(rollout_budget=100))
    env.reset()
    env.step(0)
    assert env.state.clock == 5 and env.action_mask.tolist() == [True]


def test_advance_clock_refuses_when_eligible(worked):
    state = SimState.initial(2, 3)
    with pytest.raises(EnvError):
        advance_clock(state, worked)


def test_all_finished_mask(worked):
    env = run_actions(worked, [0, 1, 0, 1, 0, 1])
    assert env.action_mask.tolist() == [False, False]
    with pytest.raises(EnvError):
        env.step(0)


def test_shared_first_machine():
    # a third job on another machine keeps the clock at 0 after the first pick
    inst = parse_standard("3 2\n0 3 1 3\n0 4 1 4\n1 2 0 2\n")
    env = JobShopEnv(inst, EnvConfig(rollout_budget=100))
    env.reset()
    assert env.action_mask.tolist()[:2] == [True, True]
    env.step(1)
    assert env.state.clock == 0 and env.action_mask.tolist() == [False, False, True]


@pytest.mark.parametrize(
    "budget, scale, span, expected",
    [(51, 1.0, 51, 100.0), (2000, 1.0, 1352, 748.0), (2000, 0.0, 1352, 0.0), (2000, 0.0, 10, 0.0)],
)
def test_final_reward(budget, scale, span, expected):
    assert final_reward(span, EnvConfig(rollout_budget=budget, final_reward_scale=scale)) == expected


def test_occupancy_examples(worked):
    env = run_actions(worked, [0, 1])
    assert env.state.clock == 10
    assert occupancy(env.state) == pytest.approx(20 / 30)
    half = SimState(4, [0, 0], [None, None], [1], [4], [], [4, 0])
    assert occupancy(half) == 0.5
    full = SimState(4, [9, 6], [0, 1], [1, 1], [9, 6], [], [9, 6])
    assert occupancy(full) == 1.0


def test_makespan_examples(worked):
    env = run_actions(parse_standard("1 1\n0 7\n"), [0])
    assert env.makespan() == 7
    env = run_actions(worked, [0, 1, 0, 1, 0, 1])
    assert makespan(env.state, worked) == 51


def test_default_rollout_budget(worked):
    assert default_rollout_budget(worked) == 2 * best_rule_makespan(worked) == 102


def test_truncation_on_budget():
    inst = generate_random(3, 3, (5, 9), seed=3)
    env = JobShopEnv(inst, EnvConfig(rollout_budget=5))
    env.reset()
    while not env.finished:
        env.step(greedy_lowest(env))
    assert env.truncated and not env.done
    assert env.state.clock > 5


def test_truncation_on_invalid_limit(worked):
    env = JobShopEnv(worked, EnvConfig(rollout_budget=100, invalid_action_limit=3))
    env.reset()
    env.step(0)
    for _ in range(4):
        r = env.step(0)
    assert r.truncated


def test_occupancy_threshold_truncates():
    inst = parse_standard("2 3\n0 1 1 50 2 1\n0 1 1 50 2 1\n")
    env = JobShopEnv(inst, EnvConfig(rollout_budget=200, occupancy_threshold=0.9, occupancy_warmup=0.0))
    env.reset()
    while not env.finished:
        env.step(greedy_lowest(env))
    assert env.truncated


def test_snapshot_restore_roundtrip(small_random):
    env = JobShopEnv(small_random, EnvConfig(rollout_budget=500))
    env.reset()
    env.step(greedy_lowest(env))
    env.step(greedy_lowest(env))
    snap = json.loads(json.dumps(env.snapshot()))
    other = JobShopEnv(small_random, EnvConfig(rollout_budget=500))
    other.reset()
    other.restore(snap)
    while not env.finished:
        a = greedy_lowest(env)
        assert env.step(a).reward == other.step(a).reward
    assert env.schedule() == other.schedule()


def test_schedule_json_roundtrip(worked):
    sched = run_actions(worked, [0, 1, 0, 1, 0, 1]).schedule()
    rec = json.loads(sched.to_json())
    assert set(rec) == {"instance", "makespan", "assignments"}
    assert Schedule.from_record(rec).makespan == 51


def test_check_schedule_catches_overlap(worked):
    bad = Schedule("worked", [
        Assignment(0, 0, 2, 0, 10), Assignment(1, 0, 1, 0, 20), Assignment(0, 1, 0, 10, 37),
        Assignment(1, 1, 2, 5, 17), Assignment(0, 2, 1, 37, 51), Assignment(1, 2, 0, 37, 49),
    ])
    assert schedule_violations(bad, worked)
    with pytest.raises(ScheduleError):
        check_schedule(bad, worked)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10**6), st.randoms(use_true_random=False))
def test_random_episodes_respect_invariants(n, m, seed, rnd):
    inst = generate_random(n, m, (1, 20), seed=seed)
    env = JobShopEnv(inst, EnvConfig(rollout_budget=inst.total_work))
    obs = env.reset()
    last_clock = 0
    history = []
    while not env.finished:
        mask = env.action_mask
        assert np.all(obs.vector >= 0) and np.all(obs.vector <= 1)
        for j in np.flatnonzero(mask):
            k = env.state.job_next_op[j]
            assert k < m
            assert env.state.machine_busy_until[inst.ops[j][k][0]] <= env.state.clock
            assert env.state.job_ready_at[j] <= env.state.clock
        a = rnd.choice(list(np.flatnonzero(mask)))
        obs = env.step(a).observation
        assert env.state.clock >= last_clock
        last_clock = env.state.clock
        assert env.state.assignments[: len(history)] == history
        history = list(env.state.assignments)
    assert env.done
    check_schedule(env.schedule(), inst)
    assert env.makespan() >= lower_bound(inst)
