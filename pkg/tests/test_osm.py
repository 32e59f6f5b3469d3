import math
import warnings
from decimal import Decimal

import pytest
from hypothesis import given, settings, strategies as st

from jobshop_rl.instance import generate_random, load_bundled, validate
from jobshop_rl.osm import (
    OsmConfig,
    OsmState,
    apply_swaps,
    max_swaps,
    on_episode_end,
    perturb,
    sample_swaps,
    swap_count,
    tau_for_swap_level,
)


def expected_swaps(tp, n, m, tau):
    # decimal oracle, independent of the Fraction code path
    return min(math.floor(Decimal(tp) * Decimal(n * m) / Decimal(100) * Decimal(repr(tau))), n * (m - 1))


def test_swap_count_examples():
    ta01 = load_bundled("ta01")
    assert swap_count(OsmState(ta01, 100), OsmConfig(0.00667)) == 1
    assert swap_count(OsmState(ta01, 0), OsmConfig(0.00667)) == 0
    assert swap_count(OsmState(ta01, 1000), OsmConfig(0.01)) == 22


def test_swap_count_disabled():
    ta01 = load_bundled("ta01")
    assert swap_count(OsmState(ta01, 10**6), OsmConfig.off()) == 0


def test_swap_count_clamped(worked):
    assert swap_count(OsmState(worked, 10**6), OsmConfig(0.01)) == max_swaps(worked) == 4


def test_swap_count_exact_where_floats_round_down():
    inst = generate_random(10, 10, (1, 9), seed=0)
    assert math.floor(1000 * 100 * 0.009 / 100) == 8  # float product lands just under 9
    assert swap_count(OsmState(inst, 1000), OsmConfig(0.009)) == expected_swaps(1000, 10, 10, 0.009) == 9


def test_tau_warning():
    with pytest.warns(UserWarning):
        OsmConfig(0.02)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        OsmConfig(0.015)
        OsmConfig(0.00667)


def test_negative_tau_rejected():
    with pytest.raises(ValueError):
        OsmConfig(-0.1)


def test_perturb_zero_is_identity(worked):
    assert perturb(worked, 0, seed=3) is worked


def test_manual_swap(worked):
    out = apply_swaps(worked, [(0, 0, 2)])
    assert out.ops[0] == ((1, 14), (0, 27), (2, 10))
    assert out.ops[1] == worked.ops[1]
    validate(out)


def test_phase_counter(worked):
    state = OsmState(worked)
    on_episode_end(state)
    assert state.training_phase == 1
    for _ in range(499):
        on_episode_end(state)
    assert state.training_phase == 500


def test_swaps_are_seeded(small_random):
    assert sample_swaps(small_random, 5, 11) == sample_swaps(small_random, 5, 11)
    assert all(a < b for _, a, b in sample_swaps(small_random, 50, 0))


def test_tau_for_swap_level():
    inst = generate_random(6, 6, (1, 9), seed=0)
    tau = tau_for_swap_level(0.1, inst, 360_000)
    final_phase = 360_000 // 36
    assert swap_count(OsmState(inst, final_phase), OsmConfig(tau, True)) == pytest.approx(3.6, abs=1)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 5000), st.integers(1, 20), st.integers(1, 20), st.sampled_from([0.0, 0.001, 0.00667, 0.01, 0.015]))
def test_swap_count_grid(tp, n, m, tau):
    inst = generate_random(n, m, (1, 5), seed=0)
    assert swap_count(OsmState(inst, tp), OsmConfig(tau, True)) == expected_swaps(tp, n, m, tau)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 40), st.integers(0, 2**31))
def test_perturbation_preserves_machine_sets(n, m, k, seed):
    base = generate_random(n, m, (1, 30), seed=seed)
    out = perturb(base, k, seed)
    validate(out)
    for a, b in zip(base.ops, out.ops):
        assert sorted(a) == sorted(b)
    assert out.total_work == base.total_work
