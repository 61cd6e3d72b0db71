import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latprune.errors import KOutOfRange, LengthMismatch, NegativeScore, NonFiniteScore
from latprune.importance import (
    ChannelScores,
    aggregate_layer_importance,
    arg_top_k,
    scores_from_dict,
    scores_to_dict,
)


def agg(values):
    return aggregate_layer_importance(ChannelScores(1, np.asarray(values, dtype=float)))


def test_all_zero_scores():
    imp = agg([0, 0, 0])
    assert np.allclose(imp.prefix, [0, 0, 0])


def test_prefix_of_sorted_values():
    imp = agg([0.2, 0.5, 0.1])
    assert imp.sorted_indices == (2, 1, 3)
    assert np.allclose(imp.prefix, [0.5, 0.7, 0.8])


def test_prefix_matches_sort_and_sum_oracle():
    rng = np.random.default_rng(64)
    v = rng.uniform(0, 5, 64)
    imp = agg(v)
    oracle = np.cumsum(np.sort(v)[::-1])
    assert np.allclose(imp.prefix, oracle, rtol=1e-12, atol=0)


def test_arg_top_k_basic():
    s = ChannelScores(1, np.asarray([0.2, 0.5, 0.1]))
    assert arg_top_k(s, 2) == [2, 1]


def test_arg_top_k_ties_break_by_index():
    s = ChannelScores(1, np.asarray([0.3, 0.3, 0.3]))
    assert arg_top_k(s, 2) == [1, 2]


def test_arg_top_k_full_permutation():
    s = ChannelScores(1, np.asarray([0.2, 0.5, 0.1]))
    imp = aggregate_layer_importance(s)
    assert arg_top_k(s, 3) == list(imp.sorted_indices)


def test_error_cases():
    with pytest.raises(NegativeScore):
        agg([0.1, -0.2])
    with pytest.raises(NonFiniteScore):
        agg([0.1, float("nan")])
    with pytest.raises(KOutOfRange):
        arg_top_k(ChannelScores(1, np.asarray([0.1, 0.2])), 3)
    with pytest.raises(LengthMismatch):
        aggregate_layer_importance(ChannelScores(1, np.asarray([0.1])), expected_channels=4)


finite_scores = st.lists(
    st.floats(min_value=0, max_value=1e6, allow_nan=False), min_size=1, max_size=40
)


@settings(max_examples=200, deadline=None)
@given(finite_scores)
def test_prefix_is_monotone(values):
    imp = agg(values)
    assert np.all(np.diff(imp.prefix) >= -1e-12)
    assert imp.prefix[0] == max(values)
    assert imp.prefix[-1] == pytest.approx(sum(sorted(values)), rel=1e-12, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(finite_scores, st.randoms(use_true_random=False))
def test_prefix_is_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    a = agg(values)
    b = agg(shuffled)
    assert np.allclose(a.prefix, b.prefix, rtol=1e-12, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(finite_scores, st.floats(min_value=1e-3, max_value=1e3))
def test_scaling_scales_prefix_and_keeps_ranking(values, c):
    a = agg(values)
    b = agg([v * c for v in values])
    assert b.sorted_indices == a.sorted_indices
    assert np.allclose(b.prefix, a.prefix * c, rtol=1e-9, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(finite_scores)
def test_top_k_is_prefix_of_top_k_plus_one(values):
    s = ChannelScores(1, np.asarray(values, dtype=float))
    for k in range(1, len(values)):
        assert arg_top_k(s, k) == arg_top_k(s, k + 1)[:k]


def test_scores_json_round_trip():
    scores = {1: ChannelScores(1, np.asarray([0.5, 0.25])), 2: ChannelScores(2, np.asarray([1.0]))}
    data = scores_to_dict(scores, num_batches=3)
    back = scores_from_dict(data)
    assert set(back) == {1, 2}
    assert np.allclose(back[1].scores, [0.5, 0.25])
