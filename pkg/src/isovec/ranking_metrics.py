"""Rank-quality metrics comparing candidate retrieval runs against a baseline.

A "run" maps query id -> ranked doc ids.  Relevance judgments (qrels) are
integer grades >= 0 keyed by (query id, doc id); the TSV interchange format
is one ``query_id<TAB>doc_id<TAB>grade`` triple per line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

__all__ = [
    "QRels",
    "QueryMismatchError",
    "RunComparison",
    "read_qrels",
    "write_qrels",
    "ndcg_at_k",
    "topk_overlap",
    "spearman_topk",
    "evaluate_run",
]

QRels = dict[int, dict[int, int]]


class QueryMismatchError(ValueError):
    """Raised when two runs do not cover the same query ids."""

    def __init__(self, only_naive, only_candidate):
        self.only_naive = sorted(only_naive)
        self.only_candidate = sorted(only_candidate)
        super().__init__(
            "query id mismatch between runs: "
            f"only in naive {self.only_naive[:10]}, only in candidate {self.only_candidate[:10]}"
        )


def read_qrels(path: str) -> QRels:
    qrels: QRels = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            qid, did, grade = (int(p) for p in parts)
            if grade < 0:
                raise ValueError(f"{path}:{lineno}: negative grade")
            qrels.setdefault(qid, {})[did] = grade
    return qrels


def write_qrels(qrels: QRels, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(qrels):
            for did in sorted(qrels[qid]):
                fh.write(f"{qid}\t{did}\t{qrels[qid][did]}\n")


def ndcg_at_k(ranked_ids: Sequence[int], rels: Mapping[int, int], k: int) -> float:
    """Graded nDCG with gain 2^grade - 1 and discount log2(rank + 1).

    The ideal ordering ranks every judged document by grade (truncated at k).
    Queries with no positively graded documents score 0.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    dcg = 0.0
    for rank, did in enumerate(ranked_ids[:k], start=1):
        grade = rels.get(did, 0)
        if grade:
            dcg += (2.0**grade - 1.0) / math.log2(rank + 1)
    ideal = sorted((g for g in rels.values() if g > 0), reverse=True)[:k]
    idcg = sum(
        (2.0**g - 1.0) / math.log2(rank + 1) for rank, g in enumerate(ideal, start=1)
    )
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def topk_overlap(a: Sequence[int], b: Sequence[int], k: int) -> float:
    """Jaccard overlap of the two truncated id sets; two empty lists -> 1.0."""
    sa, sb = set(a[:k]), set(b[:k])
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def spearman_topk(a: Sequence[int], b: Sequence[int], k: int) -> Optional[float]:
    """Rank correlation over the intersection of the two top-k lists.

    Shared documents are re-ranked 1..n by their position within each list;
    fewer than two shared documents leaves the statistic undefined (None),
    which callers must report as missing rather than zero.
    """
    ta, tb = list(a[:k]), list(b[:k])
    shared = set(ta) & set(tb)
    n = len(shared)
    if n < 2:
        return None
    pos_a = {did: i for i, did in enumerate(ta)}
    pos_b = {did: i for i, did in enumerate(tb)}
    by_a = sorted(shared, key=pos_a.get)
    rank_a = {did: r for r, did in enumerate(by_a, start=1)}
    by_b = sorted(shared, key=pos_b.get)
    rank_b = {did: r for r, did in enumerate(by_b, start=1)}
    d2 = sum((rank_a[did] - rank_b[did]) ** 2 for did in shared)
    return 1.0 - (6.0 * d2) / (n * (n * n - 1))


@dataclass(frozen=True)
class RunComparison:
    """Summary of candidate-vs-naive rank quality at cutoff k."""

    k: int
    query_count: int
    ndcg_naive: float
    ndcg_candidate: float
    ndcg_reduction: Optional[float]      # (naive - candidate) / naive
    mean_overlap: float
    mean_spearman: Optional[float]       # over queries where defined
    spearman_defined: int
    per_query: dict[int, dict] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "query_count": self.query_count,
            "ndcg_naive": self.ndcg_naive,
            "ndcg_candidate": self.ndcg_candidate,
            "ndcg_reduction": self.ndcg_reduction,
            "mean_overlap": self.mean_overlap,
            "mean_spearman": self.mean_spearman,
            "spearman_defined": self.spearman_defined,
        }


def evaluate_run(
    naive: Mapping[int, Sequence[int]],
    candidate: Mapping[int, Sequence[int]],
    qrels: QRels,
    k: int,
    keep_per_query: bool = False,
) -> RunComparison:
    """Compare two runs over the identical query set.

    nDCG reduction is relative: (naive - candidate) / naive, None when the
    naive score is zero.  Spearman averages only queries where it is defined.
    """
    nq, cq = set(naive), set(candidate)
    if nq != cq:
        raise QueryMismatchError(nq - cq, cq - nq)
    if not nq:
        raise ValueError("runs contain no queries")
    ndcg_n = []
    ndcg_c = []
    overlaps = []
    spearmans = []
    per_query: dict[int, dict] = {}
    for qid in sorted(nq):
        rels = qrels.get(qid, {})
        n_ids = list(naive[qid])
        c_ids = list(candidate[qid])
        nn = ndcg_at_k(n_ids, rels, k)
        nc = ndcg_at_k(c_ids, rels, k)
        ov = topk_overlap(n_ids, c_ids, k)
        sp = spearman_topk(n_ids, c_ids, k)
        ndcg_n.append(nn)
        ndcg_c.append(nc)
        overlaps.append(ov)
        if sp is not None:
            spearmans.append(sp)
        if keep_per_query:
            per_query[qid] = {
                "ndcg_naive": nn,
                "ndcg_candidate": nc,
                "overlap": ov,
                "spearman": sp,
            }
    mean_nn = sum(ndcg_n) / len(ndcg_n)
    mean_nc = sum(ndcg_c) / len(ndcg_c)
    return RunComparison(
        k=k,
        query_count=len(ndcg_n),
        ndcg_naive=mean_nn,
        ndcg_candidate=mean_nc,
        ndcg_reduction=None if mean_nn == 0.0 else (mean_nn - mean_nc) / mean_nn,
        mean_overlap=sum(overlaps) / len(overlaps),
        mean_spearman=(sum(spearmans) / len(spearmans)) if spearmans else None,
        spearman_defined=len(spearmans),
        per_query=per_query,
    )
