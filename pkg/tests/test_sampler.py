from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ehpskit.errors import InvalidArgument
from ehpskit.sampler import (
    SampleSchedule,
    SampleStrategy,
    build_schedule,
    plan_lengths,
    sample_indices,
    weighted_targets,
)


def _ranked(sizes):
    return [(f"d{i:02d}", s) for i, s in enumerate(sizes)]


def test_weighted_four_datasets():
    assert list(plan_lengths(_ranked([1] * 4), "weighted", 100).values()) == [40, 30, 20, 10]


def test_balanced_remainder_goes_to_best_ranked():
    assert list(plan_lengths(_ranked([5, 5, 5]), "balanced", 9).values()) == [3, 3, 3]
    assert list(plan_lengths(_ranked([5, 5, 5]), "balanced", 11).values()) == [4, 4, 3]


def test_concatenated_keeps_sizes():
    assert plan_lengths(_ranked([7, 0, 3]), "concatenated") == {"d00": 7, "d01": 0, "d02": 3}


def test_exact_targets():
    t = weighted_targets(4, 100)
    assert t == [Fraction(40), Fraction(30), Fraction(20), Fraction(10)]
    assert sum(weighted_targets(7, 1001, Fraction(3))) == 1001


@given(st.integers(1, 64), st.data())
def test_sum_and_ratio_properties(n, data):
    total = data.draw(st.integers(n, 10**6))
    for variant in ("balanced", "weighted"):
        lengths = list(plan_lengths(_ranked([1] * n), variant, total).values())
        assert sum(lengths) == total
        assert all(a >= b for a, b in zip(lengths, lengths[1:]))
    lengths = list(plan_lengths(_ranked([1] * n), "weighted", total).values())
    exact = weighted_targets(n, total)
    assert all(abs(l - x) < 1 for l, x in zip(lengths, exact))
    if n > 1:
        assert abs(lengths[0] - 4 * exact[-1]) <= 1
        assert abs(lengths[-1] - exact[-1]) <= 1


def test_invalid_plans():
    with pytest.raises(InvalidArgument):
        plan_lengths([], "balanced", 10)
    with pytest.raises(InvalidArgument):
        plan_lengths(_ranked([1, 1, 1]), "balanced", 2)
    with pytest.raises(InvalidArgument):
        plan_lengths([("a", 1), ("a", 2)], "balanced", 10)
    with pytest.raises(InvalidArgument):
        SampleStrategy("shuffled")
    with pytest.raises(InvalidArgument):
        SampleStrategy("weighted", 1)


@given(st.integers(0, 500), st.integers(1, 200), st.integers(0, 2**64 - 1))
def test_indices_cover_source_evenly(target, size, key):
    idx = sample_indices(target, size, key)
    assert len(idx) == target
    assert idx.min(initial=0) >= 0 and idx.max(initial=0) < size
    counts = np.bincount(idx, minlength=size)
    assert counts.max() - counts.min() <= 1
    assert np.array_equal(sample_indices(target, size, key), idx)


def test_downsampling_is_without_replacement():
    idx = sample_indices(50, 80, 12345)
    assert len(set(idx.tolist())) == 50


def test_empty_source():
    assert sample_indices(0, 0, 1).size == 0
    with pytest.raises(InvalidArgument):
        sample_indices(3, 0, 1)


@given(st.lists(st.integers(1, 300), min_size=1, max_size=12), st.integers(0, 2**32),
       st.sampled_from(["balanced", "weighted", "concatenated"]))
def test_schedules_do_not_depend_on_jobs(sizes, seed, variant):
    total = max(len(sizes), sum(sizes) // 2)
    one = build_schedule(_ranked(sizes), variant, total, seed, jobs=1)
    many = build_schedule(_ranked(sizes), variant, total, seed, jobs=8)
    assert one == many
    assert one.to_json() == many.to_json()


def test_frozen_schedule():
    sched = build_schedule([("AGORA", 5), ("BEDLAM", 4)], "balanced", 7, seed=42)
    doc = sched.to_dict()
    assert doc["lengths"] == {"AGORA": 4, "BEDLAM": 3}
    assert doc["index_map"] == {"AGORA": [4, 3, 0, 1], "BEDLAM": [1, 3, 2]}
    assert SampleSchedule.from_dict(doc) == sched
    assert build_schedule([("AGORA", 5), ("BEDLAM", 4)], "balanced", 7, seed=43) != sched
