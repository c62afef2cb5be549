"""Tests for the class-subset assignment: bound, decay, greedy assigner."""

import numpy as np
import pytest

from fedpriv import assignment as asg
from fedpriv.assignment import CoalitionSpec
from fedpriv.data import ClientDataset
from oracles import brute_min_max_overlap


def test_bound_examples():
    assert asg.theoretical_overlap_bound(10, 2, 5) == 0
    assert asg.theoretical_overlap_bound(10, 2, 10) == 10
    assert asg.theoretical_overlap_bound(7, 3, 2) == 0  # negative numerator clamps


def test_bound_matches_brute_force_small_case():
    lower = asg.theoretical_overlap_bound(4, 3, 2)
    assert lower == 1
    assert brute_min_max_overlap(4, 3, 2, lower_bound=lower) == 1


def test_bound_single_client_is_zero():
    assert asg.theoretical_overlap_bound(10, 1, 5) == 0


def _spec(d, n, m_max, m_min, rounds, decay="linear"):
    return CoalitionSpec(d, n, m_max, m_min, decay, rounds)


def test_decay_endpoints_and_midpoint():
    spec = _spec(2, 60, 50, 20, 100)
    assert asg.decay_subset_size(spec, 1) == 50
    assert asg.decay_subset_size(spec, 100) == 20
    assert asg.decay_subset_size(spec, 50) == 35  # floor(50 - 30*49/99)


def test_decay_single_round_returns_min():
    spec = _spec(2, 10, 8, 3, 1)
    assert asg.decay_subset_size(spec, 1) == 3


@pytest.mark.parametrize("decay", asg.DECAY_KINDS)
def test_decay_families_monotone_within_bounds(decay):
    spec = _spec(3, 30, 25, 5, 40, decay)
    values = [asg.decay_subset_size(spec, t) for t in range(1, 41)]
    assert values[0] == 25
    assert values[-1] == 5
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert all(5 <= v <= 25 for v in values)


def test_decay_rejects_out_of_range_round():
    spec = _spec(2, 10, 5, 2, 10)
    with pytest.raises(ValueError):
        asg.decay_subset_size(spec, 0)
    with pytest.raises(ValueError):
        asg.decay_subset_size(spec, 11)


def test_assign_exact_partition_when_possible():
    spec = _spec(2, 4, 2, 2, 3)
    subsets, lam = asg.assign_classes(spec, 1, seed=0)
    assert lam == 0
    assert len(subsets[0] & subsets[1]) == 0
    assert subsets[0] | subsets[1] == frozenset(range(4))


def test_assign_matches_brute_force_optimum():
    spec = _spec(3, 4, 2, 2, 3)
    subsets, lam = asg.assign_classes(spec, 1, seed=0)
    assert all(len(s) == 2 for s in subsets)
    assert frozenset().union(*subsets) == frozenset(range(4))
    assert lam == brute_min_max_overlap(4, 3, 2, lower_bound=1) == 1


def test_assign_single_client_full_set():
    spec = _spec(1, 5, 5, 5, 2)
    subsets, lam = asg.assign_classes(spec, 1, seed=3)
    assert subsets == [frozenset(range(5))]
    assert lam == 0


def test_assign_varies_across_rounds():
    # the class-to-client mapping is randomized per round
    spec = _spec(2, 8, 4, 4, 20)
    seen = {tuple(sorted(asg.assign_classes(spec, t, seed=5)[0][0])) for t in range(1, 21)}
    assert len(seen) > 1


def test_assign_below_coverage_threshold_minimizes_overlap():
    # d*m < N: full coverage impossible; subsets stay disjoint (lambda 0)
    spec = _spec(2, 10, 2, 2, 3)
    subsets, lam = asg.assign_classes(spec, 1, seed=1)
    assert all(len(s) == 2 for s in subsets)
    assert lam == 0


def test_schedule_properties_random_specs():
    rng = np.random.default_rng(0)
    for _ in range(15):
        n = int(rng.integers(3, 12))
        d = int(rng.integers(2, 5))
        m_max = int(rng.integers(2, n + 1))
        m_min = int(rng.integers(1, m_max + 1))
        rounds = int(rng.integers(2, 9))
        spec = _spec(d, n, m_max, m_min, rounds)
        schedule = asg.build_schedule(spec, seed=int(rng.integers(0, 1000)))
        for t in range(1, rounds + 1):
            m = schedule.sizes[t - 1]
            subsets = schedule.round_subsets(t)
            assert all(len(s) == m for s in subsets)
            assert schedule.lambdas[t - 1] >= asg.theoretical_overlap_bound(n, d, m)
            if d * m >= n:
                assert frozenset().union(*subsets) == frozenset(range(n))
            # greedy keeps per-class usage balanced within the coalition size
            counts = np.zeros(n, dtype=int)
            for s in subsets:
                for c in s:
                    counts[c] += 1
            assert counts.max() - counts.min() <= d


def test_schedule_deterministic():
    spec = _spec(3, 10, 6, 2, 12)
    a = asg.build_schedule(spec, seed=42)
    b = asg.build_schedule(spec, seed=42)
    assert a.subsets == b.subsets
    assert a.lambdas == b.lambdas


def _toy_client():
    x = np.arange(12, dtype=np.float64).reshape(6, 2)
    y = np.array([0, 0, 0, 1, 2, 1])
    return ClientDataset(
        client_id=0,
        train_X=x,
        train_y=y,
        val_X=np.empty((0, 2)),
        val_y=np.empty(0, dtype=np.int64),
        train_indices=np.arange(6),
        val_indices=np.empty(0, dtype=np.int64),
        class_hist=np.bincount(y, minlength=3),
    )


def test_select_assigned_subset_all_classes():
    client = _toy_client()
    pos = asg.select_assigned_subset(client, frozenset({0, 1, 2}))
    assert np.array_equal(pos, np.arange(6))


def test_select_assigned_subset_empty():
    assert len(asg.select_assigned_subset(_toy_client(), frozenset())) == 0


def test_select_assigned_subset_filters_exactly():
    pos = asg.select_assigned_subset(_toy_client(), frozenset({0}))
    assert np.array_equal(pos, np.array([0, 1, 2]))
