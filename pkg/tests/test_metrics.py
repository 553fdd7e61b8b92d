import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divrank.metrics import (
    AttentionCurve,
    MetricReport,
    diversity_metrics,
    expected_bookings,
    expected_ndcg,
    log_discount,
    ndcg,
    ndcg_from_positions,
    oracle_best_ordering,
    pareto_split,
    report_csv,
    sorted_ordering,
    swap_delta_bookings,
    swap_delta_ndcg,
)

from oracles import brute_force_best, discount, total

probs = st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=7)


def spot(price, x, y):
    return SimpleNamespace(price=price, location=(x, y))


def test_ndcg_examples():
    assert ndcg([(["a", "b"], "a"), (["c", "d"], "c")]) == 1.0
    assert ndcg([(["a", "b", "c"], "c")]) == pytest.approx(0.5, abs=1e-15)
    assert ndcg([(["a", "b", "c"], "a"), (["a", "b", "c"], "c")]) == pytest.approx(0.75, abs=1e-15)
    # unbooked searches are skipped
    assert ndcg([(["a"], None), (["a", "b"], "a")]) == 1.0
    with pytest.raises(ValueError):
        ndcg([(["a", "b"], "z")])


@given(st.integers(1, 40), st.data())
def test_ndcg_bounds(k, data):
    pos = data.draw(st.integers(0, k - 1))
    v = ndcg_from_positions([pos])
    assert math.log(2) / math.log(2 + k - 1) - 1e-15 <= v <= 1.0


def test_expected_bookings_examples():
    a = AttentionCurve((1.0, 0.6, 0.3))
    assert expected_bookings([1, 0, 0], a) == 1.0
    two = [0.5, 0.2]
    assert expected_bookings([0.1, 0.3], two, (0, 1)) == pytest.approx(0.11, abs=1e-15)
    assert expected_bookings([0.1, 0.3], two, (1, 0)) == pytest.approx(0.17, abs=1e-15)
    assert swap_delta_bookings(0.1, 0.3, 0.5, 0.2) == pytest.approx(0.06, abs=1e-15)
    with pytest.raises(ValueError):
        expected_bookings([0.1, 0.2, 0.3], two)


@given(st.floats(0, 1), st.integers(1, 7), st.permutations(range(7)))
def test_uniform_probabilities_order_invariant(p, k, perm):
    order = [i for i in perm if i < k]
    w = log_discount(k)
    assert expected_bookings([p] * k, w, order) == pytest.approx(p * w.sum(), abs=1e-12)


def test_attention_curve_validation():
    with pytest.raises(ValueError):
        AttentionCurve((1.0, 1.0))
    with pytest.raises(ValueError):
        AttentionCurve((1.2, 0.5))
    with pytest.raises(ValueError):
        AttentionCurve((0.5, 0.0))
    assert len(AttentionCurve.log_discount(5)) == 5


def test_swap_delta_ndcg_examples():
    assert swap_delta_ndcg(0.2, 0.2, 0, 3) == 0.0
    assert swap_delta_ndcg(0.1, 0.3, 0, 2) == pytest.approx(0.1, abs=1e-15)
    assert swap_delta_ndcg(0.1, 0.4, 1, 4) > 0
    with pytest.raises(ValueError):
        swap_delta_ndcg(0.1, 0.2, 2, 2)


@settings(max_examples=300)
@given(probs, st.data())
def test_swap_deltas_match_recomputation(p, data):
    k = len(p)
    if k < 2:
        return
    x, y = sorted(data.draw(st.lists(st.integers(0, k - 1), min_size=2, max_size=2, unique=True)))
    order = list(range(k))
    swapped = order.copy()
    swapped[x], swapped[y] = swapped[y], swapped[x]
    w = log_discount(k)
    before, after = expected_ndcg(p, order), expected_ndcg(p, swapped)
    assert after - before == pytest.approx(swap_delta_ndcg(p[x], p[y], x, y), abs=1e-12)
    attn = np.sort(np.random.default_rng(k).uniform(0.01, 1, k))[::-1]
    db = expected_bookings(p, attn, swapped) - expected_bookings(p, attn, order)
    assert db == pytest.approx(swap_delta_bookings(p[x], p[y], attn[x], attn[y]), abs=1e-12)
    assert after == pytest.approx(total(p, w, swapped), abs=1e-12)


def test_oracle_examples():
    rng = np.random.default_rng(3)
    p = rng.uniform(size=6)
    order, value = oracle_best_ordering(p)
    assert order == sorted_ordering(p)
    assert value == pytest.approx(brute_force_best(p, [discount(j) for j in range(6)]), abs=1e-12)
    for _ in range(100):
        assert value >= expected_ndcg(p, rng.permutation(6)) - 1e-15
    flat_order, flat_value = oracle_best_ordering([0.3] * 4)
    assert flat_value == pytest.approx(0.3 * log_discount(4).sum(), abs=1e-15)
    with pytest.raises(ValueError):
        oracle_best_ordering(np.ones(9))


@settings(max_examples=200)
@given(probs)
def test_sorted_order_attains_oracle(p):
    k = len(p)
    _, best = oracle_best_ordering(p)
    assert expected_ndcg(p, sorted_ordering(p)) == pytest.approx(best, abs=1e-12)
    attention = np.sort(np.random.default_rng(k).uniform(0.01, 1, k))[::-1]
    if len(set(attention)) == k:
        _, best_a = oracle_best_ordering(p, attention)
        assert expected_bookings(p, attention, sorted_ordering(p)) == pytest.approx(best_a, abs=1e-12)


@settings(max_examples=100)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6, unique=True), st.floats(0.1, 3.0))
def test_alignment_of_attention_and_discount(p, scale):
    # attention proportional to the log discount picks the same argmax ordering
    k = len(p)
    a, _ = oracle_best_ordering(p)
    b, _ = oracle_best_ordering(p, log_discount(k) / max(scale, 1.0))
    assert a == b


def test_diversity_examples():
    same_price = [[spot(100.0, i, 0) for i in range(8)]]
    assert diversity_metrics(same_price).price_variance_top8 == 0.0
    stacked = [[spot(float(i), 1.0, 1.0) for i in range(8)]]
    assert diversity_metrics(stacked).geo_redundancy_top8 == 28
    spaced = [[spot(float(i), 0.5 * i, 0.0) for i in range(8)]]
    assert diversity_metrics(spaced).geo_redundancy_top8 == 0
    # only the top 8 count; short lists are flagged
    stats = diversity_metrics([[spot(1.0, 0, 0)] * 10, [spot(1.0, 0, 0)] * 3])
    assert stats.geo_redundancy_top8 == pytest.approx((28 + 3) / 2)
    assert stats.n_short == 1 and stats.n_searches == 2


def test_price_variance_is_population():
    stats = diversity_metrics([[spot(p, 10 * p, 0) for p in (1.0, 3.0)]])
    assert stats.price_variance_top8 == 1.0


def test_pareto_examples():
    assert pareto_split([5.0] * 10).split_point == 0.5
    assert pareto_split([9, 1, 1, 1, 1, 1, 1, 1, 1, 1]).split_point == pytest.approx(0.1)
    with pytest.raises(ValueError):
        pareto_split([])
    curve = pareto_split(np.random.default_rng(0).lognormal(0, 1, 50))
    assert np.all(np.diff(curve.value_fraction) >= 0) and curve.value_fraction[-1] == pytest.approx(1.0)


def test_report_csv_rows():
    rep = MetricReport(ndcg=0.8, expected_bookings=0.5, n_searches=10, n_booked=4)
    text = report_csv([("algorithm1", rep)])
    lines = text.strip().splitlines()
    assert lines[0] == "experiment,metric,value"
    assert "algorithm1,ndcg,0.8" in lines
    assert len(lines) == 1 + len(rep.scalars())
