import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divrank.base import RankingModel, train_base
from divrank.checkpoint import file_hash
from divrank.experiment import zero_output
from divrank.nn import Network, TrainConfig
from divrank.similarity import (
    EmbeddingCache,
    SimilarityModel,
    conditional_loss,
    conditional_loss_and_grads,
    conditional_set,
    embed,
    improvement_z,
    similarity_logit,
    train_similarity,
)
from divrank.simulator import STREAM_EVAL, MarketConfig, candidate_impressions, generate_market, sample_search

from conftest import L, Q, U, ctx, impression, make_log, random_logs

IDS = {"query": Q, "user": U, "listing": L}
DIMS = {"query": 2, "user": 1, "listing": 3}


def live_model(seed=0):
    m = SimilarityModel.create(IDS, DIMS, seed=seed)
    m.combiner.weights[-1][:] = np.random.default_rng(seed).normal(size=m.combiner.weights[-1].shape)
    return m


@pytest.fixture(scope="module")
def trained_base():
    return train_base(random_logs(200, k=8, seed=3), TrainConfig(epochs=2))


def test_embed_cache_semantics():
    m = live_model()
    cache = EmbeddingCache()
    imp = impression("a", 0, [0.3, -1.0, 2.0])
    first = embed(m, imp, cache)
    n = cache.tower_evaluations
    second = embed(m, imp, cache)
    assert np.array_equal(first, second) and cache.tower_evaluations == n == 1
    assert "a" in cache and len(cache) == 1


def test_zero_tower_and_combiner():
    m = SimilarityModel.create(IDS, DIMS, zero=True)
    imp = impression("a", 0, [0.3, -1.0, 2.0])
    assert not np.any(embed(m, imp, EmbeddingCache()))
    assert similarity_logit(m, ctx(), imp, impression("b", 1, [1.0, 1.0, 1.0])) == 0.0


def test_fresh_model_is_zero_map():
    m = SimilarityModel.create(IDS, DIMS, seed=4)
    assert similarity_logit(m, ctx(), impression("a", 0, [1, 2, 3]), impression("b", 1, [3, 2, 1])) == 0.0


def test_identical_features_identical_embeddings():
    m = live_model(1)
    e = m.embed_many([impression("a", 0, [1.0, 2.0, 3.0]), impression("b", 3, [1.0, 2.0, 3.0])])
    assert np.array_equal(e[0], e[1])


def test_logit_deterministic_and_not_symmetric():
    m = live_model(2)
    a, b = impression("a", 0, [1.0, 0.0, -1.0]), impression("b", 1, [-2.0, 0.5, 0.3])
    assert similarity_logit(m, ctx(), a, b) == similarity_logit(m, ctx(), a, b)
    assert similarity_logit(m, ctx(), a, b) != similarity_logit(m, ctx(), b, a)


def test_schema_mismatch():
    m = live_model()
    from divrank.base import SchemaMismatch

    with pytest.raises(SchemaMismatch):
        similarity_logit(m, ctx(), impression("a", 0, [1.0]), impression("b", 1, [1.0, 2.0, 3.0]))
    with pytest.raises(SchemaMismatch):
        similarity_logit(m, ctx(q=(1.0,)), impression("a", 0, [1, 2, 3]), impression("b", 1, [1, 2, 3]))


def test_shared_tower_slot_swap():
    m = live_model(3)
    a, b = impression("a", 0, [0.1, 0.2, 0.3]), impression("b", 1, [-1.0, 0.5, 2.0])
    ab, ba = m.embed_many([a, b]), m.embed_many([b, a])
    assert np.array_equal(ab[0], ba[1]) and np.array_equal(ab[1], ba[0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=40), st.integers(0, 100))
def test_cache_bit_exact(sequence, seed):
    m = live_model(seed % 4)
    rng = np.random.default_rng(seed)
    pool = [impression(f"L{i}", 0, rng.normal(size=3)) for i in range(10)]
    cache = EmbeddingCache()
    for i in sequence:
        cached = m.embed_many([pool[i]], cache)[0]
        fresh = m.tower.forward_batch(np.asarray([pool[i].features.values]))[0]
        assert np.array_equal(cached, fresh)
    assert cache.tower_evaluations == len(set(sequence))


def test_cached_embeddings_are_read_only():
    m = live_model()
    cache = EmbeddingCache()
    m.embed_many([impression("a", 0, [1, 2, 3])], cache)
    with pytest.raises(ValueError):
        cache.get("a")[0] = 5.0


def test_zero_init_loss_equals_base_loss(trained_base):
    data = conditional_set(trained_base, random_logs(100, k=8, seed=9))
    fresh = SimilarityModel.create(IDS, DIMS, seed=1)
    assert len(data) > 0
    assert conditional_loss(fresh, data) == conditional_loss(None, data)


def test_gradients_cover_only_similarity_weights(trained_base):
    logs = random_logs(60, k=8, seed=5)
    data = conditional_set(trained_base, logs)
    m = live_model()
    _, grads = conditional_loss_and_grads(m, data, np.arange(len(data)))
    assert [g.shape for g in grads] == [p.shape for p in m.params()]


def test_frozen_base(tmp_path, trained_base):
    path = tmp_path / "base.json"
    trained_base.save(path)
    before = file_hash(path)
    params = [p.copy() for p in trained_base.net.params()]
    train_similarity(trained_base, random_logs(150, k=8, seed=6), TrainConfig(epochs=2))
    trained_base.save(path)
    assert file_hash(path) == before
    assert all(np.array_equal(a, b) for a, b in zip(params, trained_base.net.params()))


def test_train_errors(trained_base):
    with pytest.raises(ValueError):
        train_similarity(trained_base, [make_log("S", 5, booked_at=0), make_log("T", 5, None)])
    untrained = RankingModel(Network.zeros([6, 8, 1]), IDS, DIMS)
    with pytest.raises(ValueError):
        train_similarity(untrained, random_logs(20))


def test_train_deterministic_and_round_trip(tmp_path, trained_base):
    logs = random_logs(120, k=8, seed=8)
    cfg = TrainConfig(epochs=2, seed=3)
    a, b = train_similarity(trained_base, logs, cfg), train_similarity(trained_base, logs, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))
    a.save(tmp_path / "s.json")
    back = SimilarityModel.load(tmp_path / "s.json")
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), back.params()))


def test_init_is_not_mutated(trained_base):
    init = live_model(5)
    snapshot = copy.deepcopy(init.params())
    train_similarity(trained_base, random_logs(80, k=8, seed=2), TrainConfig(epochs=1), init=init)
    assert all(np.array_equal(x, y) for x, y in zip(snapshot, init.params()))


def test_conditional_set_tracks_searches(trained_base):
    logs = random_logs(60, k=6, seed=7)
    data = conditional_set(trained_base, logs)
    eligible = sum(1 for log in logs if log.booked is not None and log.booked.position > 0)
    assert len(data.search) == len(data) and len(np.unique(data.search)) == eligible
    assert np.all(np.diff(data.search) >= 0)


def test_improvement_z(trained_base):
    data = conditional_set(trained_base, random_logs(120, k=8, seed=8))
    assert improvement_z(SimilarityModel.create(IDS, DIMS, seed=1), data) == 0.0
    z = improvement_z(live_model(6), data)
    assert np.isfinite(z) and z != 0.0


def test_zero_output_copy():
    m = live_model(7)
    z = zero_output(m)
    a, b = impression("a", 0, [1.0, 0.0, -1.0]), impression("b", 1, [-2.0, 0.5, 0.3])
    assert similarity_logit(z, ctx(), a, b) == 0.0 and similarity_logit(m, ctx(), a, b) != 0.0


# -- trained on the clustered market (shared with the acceptance suite) ---------


def _pair_logits(run, n_pairs=1000):
    market = generate_market(MarketConfig(seed=run.seed))
    rng = np.random.default_rng(run.seed)
    same, cross = [], []
    i = 0
    while len(same) < n_pairs or len(cross) < n_pairs:
        search = sample_search(market, STREAM_EVAL, 50_000 + i)
        i += 1
        cand = search.candidates
        cl = market.cluster[cand]
        a = int(rng.integers(len(cand)))
        mates = np.flatnonzero((cl == cl[a]) & (np.arange(len(cand)) != a))
        others = np.flatnonzero(cl != cl[a])
        imps = candidate_impressions(market, cand)
        if len(mates) and len(same) < n_pairs:
            same.append(similarity_logit(run.sim, search.ctx, imps[int(rng.choice(mates))], imps[a]))
        if len(others) and len(cross) < n_pairs:
            cross.append(similarity_logit(run.sim, search.ctx, imps[int(rng.choice(others))], imps[a]))
    return float(np.mean(same)), float(np.mean(cross))


@pytest.mark.slow
def test_same_cluster_pairs_score_higher(clustered_runs):
    for run in clustered_runs:
        same, cross = _pair_logits(run)
        assert same > cross, (run.seed, same, cross)


@pytest.mark.slow
def test_heldout_conditional_loss_beats_zero_similarity(clustered_runs):
    for run in clustered_runs:
        assert run.conditional_loss["similarity"] < run.conditional_loss["base"], run.seed


@pytest.mark.slow
def test_conditional_ndcg_improves(clustered_runs):
    assert len(clustered_runs) >= 5
    diffs = [r.conditional_ndcg["algorithm2"] - r.conditional_ndcg["algorithm1"] for r in clustered_runs]
    assert np.mean(diffs) > 0
    assert all(d > 0 for d in diffs), diffs
