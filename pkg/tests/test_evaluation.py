"""Retrieval metrics and index behaviour against brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgli.evaluation import (
    EvaluationError,
    RankedResult,
    RetrievalIndex,
    build_index,
    evaluate_model,
    rank_scores,
    recall_at,
    recall_table,
    retrieve_topk,
    retrieve_topk_batch,
)
from lgli.tensor import no_grad


def _results_from_ranks(ranks):
    return [RankedResult(i, [], r) for i, r in enumerate(ranks)]


# ---------------------------------------------------------------------------
# recall
# ---------------------------------------------------------------------------

def test_recall_worked_example():
    results = _results_from_ranks([1, 3, 12, 2])
    assert recall_at(results, 1) == 25.0
    assert recall_at(results, 5) == 75.0
    assert recall_at(results, 10) == 75.0


def test_recall_all_rank_one_is_hundred():
    results = _results_from_ranks([1] * 7)
    for n in (1, 5, 10, 50):
        assert recall_at(results, n) == 100.0


def test_recall_none_rank_counts_as_miss():
    results = _results_from_ranks([1, None, 4])
    assert recall_at(results, 5) == pytest.approx(200.0 / 3)


def test_recall_matches_brute_force_recount_on_1000_lists():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n_queries = int(rng.integers(1, 12))
        ranks = [int(r) if r > 0 else None
                 for r in rng.integers(0, 30, size=n_queries)]
        results = _results_from_ranks(ranks)
        n = int(rng.integers(1, 25))
        # independent recount
        count = 0
        for r in ranks:
            if r is not None and r <= n:
                count += 1
        expected = 100.0 * count / n_queries
        assert recall_at(results, n) == expected


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(st.none(), st.integers(1, 40)), min_size=1, max_size=30))
def test_recall_monotone_in_n(ranks):
    results = _results_from_ranks(ranks)
    values = [recall_at(results, n) for n in range(1, 45)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_recall_table_contains_mean():
    table = recall_table(_results_from_ranks([1, 2, 7]), ns=(1, 5, 10))
    assert set(table) == {"R@1", "R@5", "R@10", "mean"}
    assert table["mean"] == pytest.approx(np.mean([table["R@1"], table["R@5"], table["R@10"]]))


def test_recall_rejects_bad_inputs():
    with pytest.raises(EvaluationError):
        recall_at([], 1)
    with pytest.raises(EvaluationError):
        recall_at(_results_from_ranks([1]), 0)


# ---------------------------------------------------------------------------
# ranking against a brute-force sort oracle
# ---------------------------------------------------------------------------

def test_rank_scores_matches_exhaustive_sort_on_100_queries():
    rng = np.random.default_rng(1)
    for _ in range(100):
        g = int(rng.integers(2, 40))
        d = int(rng.integers(2, 8))
        feats = rng.standard_normal((g, d))
        ids = rng.permutation(1000)[:g].tolist()
        index = RetrievalIndex(feats, ids, "test")
        q = rng.standard_normal(d)
        got = rank_scores(index, q)
        scores = {sid: float(feats[i] @ q) for i, sid in enumerate(ids)}
        expected = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        assert [sid for sid, _ in got] == [sid for sid, _ in expected]


def test_rank_scores_tie_breaks_by_ascending_id():
    feats = np.array([[1.0], [1.0], [1.0]])
    index = RetrievalIndex(feats, [30, 10, 20], "test")
    got = rank_scores(index, np.array([1.0]))
    assert [sid for sid, _ in got] == [10, 20, 30]


def test_ranking_invariant_to_gallery_row_order():
    rng = np.random.default_rng(2)
    feats = rng.standard_normal((10, 4))
    ids = list(range(10))
    q = rng.standard_normal(4)
    base = rank_scores(RetrievalIndex(feats, ids, "test"), q)
    perm = rng.permutation(10)
    shuffled = rank_scores(RetrievalIndex(feats[perm], [ids[i] for i in perm], "test"), q)
    assert base == shuffled


# ---------------------------------------------------------------------------
# index + retrieval over a real (tiny) trained model
# ---------------------------------------------------------------------------

def test_index_row_count_matches_target_pool(tiny_model, tiny_dataset):
    index = build_index(tiny_model, tiny_dataset, "test")
    assert index.features.shape[0] == len(tiny_dataset.target_pool("test"))
    assert index.features.shape[1] == 256


def test_index_rebuild_is_bitwise_identical(tiny_model, tiny_dataset):
    a = build_index(tiny_model, tiny_dataset, "test")
    b = build_index(tiny_model, tiny_dataset, "test")
    assert np.array_equal(a.features, b.features)
    assert a.scene_ids == b.scene_ids


def test_index_rows_match_single_image_forward(tiny_model, tiny_dataset):
    index = build_index(tiny_model, tiny_dataset, "test")
    for row, sid in list(zip(index.features, index.scene_ids))[:5]:
        img = tiny_dataset.render(sid)[None]
        with no_grad():
            encoded = tiny_model.encode_targets(img)
        fresh = tiny_model.final_feature(encoded)[0]
        assert np.allclose(row, fresh, atol=1e-12)


def test_empty_split_errors(tiny_model, tiny_dataset):
    with pytest.raises(EvaluationError):
        build_index(tiny_model, tiny_dataset, "nope")


def test_retrieve_singleton_gallery_is_rank_one(tiny_model, tiny_dataset):
    tp = tiny_dataset.split_triplets("test")[0]
    feats = tiny_model.compose_eval(tiny_dataset, [tp])
    with no_grad():
        encoded = tiny_model.encode_targets(tiny_dataset.render(tp.target.scene_id)[None])
    solo = RetrievalIndex(tiny_model.final_feature(encoded),
                          [tp.target.scene_id], "test")
    from lgli.evaluation import _result_from_feature

    res = _result_from_feature(0, feats[0], solo, tp.target.scene_id, k=1)
    assert res.rank_of_first_correct == 1


def test_k_larger_than_gallery_returns_full_ranking(tiny_model, tiny_dataset):
    index = build_index(tiny_model, tiny_dataset, "test")
    tp = tiny_dataset.split_triplets("test")[0]
    res = retrieve_topk(tiny_model, tiny_dataset, tp, index, k=10_000)
    assert len(res.ranking) == len(index.scene_ids)


def test_k_must_be_positive(tiny_model, tiny_dataset):
    index = build_index(tiny_model, tiny_dataset, "test")
    tp = tiny_dataset.split_triplets("test")[0]
    with pytest.raises(EvaluationError):
        retrieve_topk(tiny_model, tiny_dataset, tp, index, k=0)


def test_evaluate_model_reports_requested_ns(tiny_model, tiny_dataset):
    table = evaluate_model(tiny_model, tiny_dataset, "test", ns=(1, 5))
    assert set(table) == {"R@1", "R@5", "mean"}
    assert 0.0 <= table["R@1"] <= table["R@5"] <= 100.0


def test_evaluation_never_mutates_the_checkpoint(tiny_model, tiny_dataset):
    before = {k: v.data.copy() for k, v in tiny_model.params.items()}
    evaluate_model(tiny_model, tiny_dataset, "test", ns=(1, 5))
    for name, arr in before.items():
        assert np.array_equal(arr, tiny_model.params[name].data)


def test_sweep_arms_differ_only_in_alpha():
    from dataclasses import replace

    from lgli.model import ModelConfig

    base = ModelConfig(vocabulary=["a", "b"])
    a = replace(base, alpha=1e-2).to_dict()
    b = replace(base, alpha=1e-6).to_dict()
    diff = {k for k in a if a[k] != b[k]}
    assert diff == {"alpha"}


def test_batch_retrieval_matches_single_queries(tiny_model, tiny_dataset):
    trips = tiny_dataset.split_triplets("test")[:6]
    index = build_index(tiny_model, tiny_dataset, "test")
    batch = retrieve_topk_batch(tiny_model, tiny_dataset, trips, index, k=5)
    for tp, got in zip(trips, batch):
        solo = retrieve_topk(tiny_model, tiny_dataset, tp, index, k=5)
        assert [sid for sid, _ in solo.ranking] == [sid for sid, _ in got.ranking]
        assert solo.rank_of_first_correct == got.rank_of_first_correct
