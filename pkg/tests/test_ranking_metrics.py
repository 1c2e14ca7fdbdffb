"""Ranking agreement metrics and run comparison."""

from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isovec.ranking_metrics import (
    QueryMismatchError,
    evaluate_run,
    ndcg_at_k,
    read_qrels,
    spearman_topk,
    topk_overlap,
    write_qrels,
)


# -- nDCG ------------------------------------------------------------------


def test_ndcg_relevant_at_rank1():
    assert ndcg_at_k([5, 1, 2], {5: 1}, 10) == pytest.approx(1.0)


def test_ndcg_relevant_at_rank2():
    # DCG = 1/log2(3), IDCG = 1
    assert ndcg_at_k([1, 5, 2], {5: 1}, 10) == pytest.approx(0.6309297535714575, abs=1e-12)


def test_ndcg_no_relevant():
    assert ndcg_at_k([1, 2, 3], {9: 1}, 10) == 0.0


def test_ndcg_empty_qrels():
    assert ndcg_at_k([1, 2, 3], {}, 10) == 0.0


def test_ndcg_graded_hand_oracle():
    # grades a=3, b=1; ranking [b, a]:
    #   DCG  = (2^1-1)/log2(2) + (2^3-1)/log2(3) = 1 + 7/log2(3)
    #   IDCG = (2^3-1)/log2(2) + (2^1-1)/log2(3) = 7 + 1/log2(3)
    expected = (1 + 7 / math.log2(3)) / (7 + 1 / math.log2(3))
    assert ndcg_at_k([2, 1], {1: 3, 2: 1}, 10) == pytest.approx(expected, abs=1e-12)


def test_ndcg_cutoff_applies():
    # the relevant doc below the cutoff contributes nothing
    assert ndcg_at_k([1, 2, 3], {3: 1}, 2) == 0.0


def test_ndcg_ideal_truncates():
    # IDCG at k=1 only counts the best single document
    val = ndcg_at_k([1], {1: 1, 2: 1}, 1)
    assert val == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(
    ids=st.lists(st.integers(min_value=0, max_value=20), min_size=1, max_size=15,
                 unique=True),
    rel_ids=st.sets(st.integers(min_value=0, max_value=20), max_size=10),
    k=st.integers(min_value=1, max_value=15),
)
def test_property_ndcg_bounds(ids, rel_ids, k):
    val = ndcg_at_k(ids, {r: 1 for r in rel_ids}, k)
    assert 0.0 <= val <= 1.0 + 1e-12


# -- overlap ---------------------------------------------------------------


def test_overlap_identical():
    assert topk_overlap([1, 2, 3], [3, 2, 1], 10) == 1.0


def test_overlap_disjoint():
    assert topk_overlap([1, 2], [3, 4], 10) == 0.0


def test_overlap_partial():
    a = list(range(10))
    b = list(range(1, 10)) + [99]
    assert topk_overlap(a, b, 10) == pytest.approx(9 / 11, abs=1e-12)


def test_overlap_both_empty():
    assert topk_overlap([], [], 10) == 1.0


def test_overlap_truncates_to_k():
    assert topk_overlap([1, 2, 3, 4], [1, 2, 9, 9], 2) == 1.0


@settings(max_examples=50, deadline=None)
@given(
    a=st.lists(st.integers(min_value=0, max_value=30), max_size=12, unique=True),
    b=st.lists(st.integers(min_value=0, max_value=30), max_size=12, unique=True),
)
def test_property_overlap_symmetric_bounded(a, b):
    x = topk_overlap(a, b, 10)
    assert x == topk_overlap(b, a, 10)
    assert 0.0 <= x <= 1.0


# -- Spearman over the shared set ------------------------------------------


def test_spearman_identical():
    assert spearman_topk([1, 2, 3], [1, 2, 3], 10) == pytest.approx(1.0)


def test_spearman_reversed():
    assert spearman_topk([1, 2, 3, 4], [4, 3, 2, 1], 10) == pytest.approx(-1.0)


def test_spearman_single_swap():
    # shared {a,b,c}: ranks (1,2,3) vs (1,3,2): rho = 1 - 6*2/(3*8) = 0.5
    assert spearman_topk([1, 2, 3], [1, 3, 2], 10) == pytest.approx(0.5, abs=1e-12)


def test_spearman_ignores_nonshared():
    # non-shared ids must not influence the re-ranking of the shared set
    assert spearman_topk([9, 1, 2, 3], [1, 8, 3, 2], 10) == pytest.approx(0.5, abs=1e-12)


def test_spearman_undefined_below_two_shared():
    assert spearman_topk([1, 2], [3, 4], 10) is None
    assert spearman_topk([1, 2], [1, 3], 10) is None
    assert spearman_topk([], [], 10) is None


@settings(max_examples=50, deadline=None)
@given(perm=st.permutations(list(range(8))))
def test_property_spearman_range_and_antisymmetry(perm):
    base = list(range(8))
    rho = spearman_topk(base, perm, 8)
    assert -1.0 - 1e-12 <= rho <= 1.0 + 1e-12
    rev = spearman_topk(base, perm[::-1], 8)
    assert rho == pytest.approx(-rev, abs=1e-9)


# -- run comparison --------------------------------------------------------


def test_evaluate_identical_runs():
    run = {1: [10, 11], 2: [20, 21]}
    qrels = {1: {10: 1}, 2: {21: 1}}
    cmp = evaluate_run(run, run, qrels, 10)
    assert cmp.ndcg_reduction == pytest.approx(0.0)
    assert cmp.mean_overlap == 1.0
    assert cmp.mean_spearman == pytest.approx(1.0)
    assert cmp.query_count == 2


def test_evaluate_single_query_hand_oracle():
    naive = {5: [1, 2, 3]}
    cand = {5: [2, 1, 4]}
    qrels = {5: {1: 1}}
    cmp = evaluate_run(naive, cand, qrels, 3, keep_per_query=True)
    assert cmp.ndcg_naive == pytest.approx(1.0)
    assert cmp.ndcg_candidate == pytest.approx(0.6309297535714575)
    assert cmp.mean_overlap == pytest.approx(2 / 4)
    assert cmp.mean_spearman == pytest.approx(-1.0)  # shared {1,2} swapped
    assert cmp.ndcg_reduction == pytest.approx(1 - 0.6309297535714575, abs=1e-12)
    assert 5 in cmp.per_query


def test_evaluate_mismatched_queries():
    with pytest.raises(QueryMismatchError) as exc:
        evaluate_run({1: [0]}, {2: [0]}, {}, 10)
    msg = str(exc.value)
    assert "1" in msg and "2" in msg


def test_evaluate_empty_runs():
    with pytest.raises(ValueError):
        evaluate_run({}, {}, {}, 10)


def test_evaluate_spearman_none_when_never_defined():
    cmp = evaluate_run({1: [1, 2]}, {1: [3, 4]}, {1: {1: 1}}, 10)
    assert cmp.mean_spearman is None
    assert cmp.spearman_defined == 0


def test_evaluate_reduction_none_when_naive_zero():
    cmp = evaluate_run({1: [5]}, {1: [6]}, {1: {9: 1}}, 10)
    assert cmp.ndcg_naive == 0.0
    assert cmp.ndcg_reduction is None


# -- qrels io --------------------------------------------------------------


def test_qrels_roundtrip(tmp_path):
    qrels = {0: {10: 1, 11: 2}, 3: {12: 1}}
    path = str(tmp_path / "qrels.tsv")
    write_qrels(qrels, path)
    assert read_qrels(path) == qrels
    first = open(path).readline().rstrip("\n").split("\t")
    assert first == ["0", "10", "1"]


def test_qrels_rejects_malformed(tmp_path):
    path = str(tmp_path / "bad.tsv")
    with open(path, "w") as fh:
        fh.write("1\t2\n")
    with pytest.raises(ValueError):
        read_qrels(path)
