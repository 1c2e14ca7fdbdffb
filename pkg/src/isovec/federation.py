"""Multi-organization retrieval: partitioning, per-org querying, merging.

A consortium is a list of organizations, each owning a key-specific store.
Queries are transformed per organization, scored locally, min-max normalized
per result list and merged; raw (untransformed) organizations are allowed so
a naive baseline can run through the identical pipeline.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .keys import OrgKey, PrngStream
from .store import EmbeddingMatrix, RetrievalHit, query_topk
from .transform import TransformPlan, transform

__all__ = [
    "Organization",
    "AccessPolicy",
    "AggregatedContext",
    "partition_stratified",
    "min_max_normalize",
    "transform_query",
    "federated_query",
]


@dataclass(frozen=True, eq=False)
class Organization:
    """One participant: its id, key material and (possibly raw) store."""

    org_id: int
    store: EmbeddingMatrix
    key: Optional[OrgKey] = None
    plan: Optional[TransformPlan] = None

    def __post_init__(self) -> None:
        if self.plan is not None:
            if not self.store.transformed:
                raise ValueError(f"org {self.org_id}: plan given but store is raw")
            if self.store.config_digest != self.plan.digest():
                raise ValueError(f"org {self.org_id}: store does not match plan digest")
        elif self.store.transformed:
            raise ValueError(f"org {self.org_id}: transformed store requires a plan")


@dataclass(frozen=True)
class AccessPolicy:
    """Which organizations may contribute results."""

    authorized: frozenset[int]

    @classmethod
    def allow(cls, org_ids) -> "AccessPolicy":
        return cls(authorized=frozenset(int(i) for i in org_ids))

    def permits(self, org_id: int) -> bool:
        return org_id in self.authorized


@dataclass(frozen=True)
class AggregatedContext:
    """Merged, truncated federated result list for one query."""

    hits: tuple[RetrievalHit, ...]
    k: int
    query_id: Optional[int] = None

    def doc_ids(self) -> list[int]:
        return [h.doc_id for h in self.hits]

    def to_dict(self) -> dict:
        out = {"hits": [h.to_dict() for h in self.hits], "k": self.k}
        if self.query_id is not None:
            out["query_id"] = self.query_id
        return out


def partition_stratified(docs: EmbeddingMatrix, m: int, seed: int) -> list[EmbeddingMatrix]:
    """Split rows into ``m`` shards, balanced within every label.

    Rows of each label are shuffled by a label-specific seeded stream and
    dealt round-robin, so per-label counts across shards differ by at most
    one.  Unlabeled stores are treated as a single stratum.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    labels = docs.labels
    if labels is None:
        strata = [np.arange(docs.count)]
    else:
        strata = [np.flatnonzero(labels == lab) for lab in np.unique(labels)]
    shard_positions: list[list[int]] = [[] for _ in range(m)]
    for stratum in strata:
        lab = int(labels[stratum[0]]) if labels is not None and stratum.size else 0
        stream = PrngStream(
            hashlib.sha256(
                b"partition" + int(seed).to_bytes(8, "little") + lab.to_bytes(4, "little")
            ).digest()
        )
        order = stratum.copy()
        for i in range(order.size - 1, 0, -1):
            j = stream.uniform_range(i + 1)
            order[i], order[j] = order[j], order[i]
        for slot, pos in enumerate(order):
            shard_positions[slot % m].append(int(pos))
    rows = docs.rows
    shards = []
    for positions in shard_positions:
        idx = np.array(sorted(positions), dtype=np.int64)
        shards.append(
            EmbeddingMatrix(
                dim=docs.dim,
                ids=docs.ids[idx].copy(),
                segments=(np.ascontiguousarray(rows[idx]),),
                labels=None if labels is None else labels[idx].copy(),
                unit_norm=docs.unit_norm,
                transformed=docs.transformed,
                config_digest=docs.config_digest,
            )
        )
    return shards


def min_max_normalize(scores: Sequence[float]) -> list[float]:
    """Rescale to [0, 1]; constant or single-score lists map to all 1.0."""
    if not len(scores):
        return []
    lo = min(scores)
    hi = max(scores)
    if hi == lo:
        return [1.0 for _ in scores]
    span = hi - lo
    return [(s - lo) / span for s in scores]


def transform_query(org: Organization, q: np.ndarray) -> np.ndarray:
    """The query as org's store expects it: transformed, or just unit-norm."""
    arr = np.asarray(q, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != org.store.dim:
        raise ValueError(f"query must have dimension {org.store.dim}")
    if org.plan is not None:
        return transform(arr, org.plan)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValueError("degenerate vector: zero norm query")
    return arr / norm


def _org_hits(org: Organization, q: np.ndarray, k: int) -> list[RetrievalHit]:
    local_q = transform_query(org, q)
    hits = query_topk(org.store, local_q, k, org_id=org.org_id)
    normalized = min_max_normalize([h.score for h in hits])
    return [
        RetrievalHit(
            doc_id=h.doc_id,
            org_id=h.org_id,
            score=h.score,
            rank=h.rank,
            normalized_score=ns,
        )
        for h, ns in zip(hits, normalized)
    ]


def federated_query(
    consortium: Sequence[Organization],
    q: np.ndarray,
    k: int,
    policy: AccessPolicy,
    query_id: Optional[int] = None,
    workers: int | None = None,
) -> AggregatedContext:
    """Query every authorized org, normalize per org, merge, truncate to k.

    Merge order is (normalized score desc, org id asc, doc id asc), so the
    result is independent of dispatch order or parallelism.  Policy entries
    naming unknown orgs are ignored; an empty policy yields an empty context.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    eligible = [org for org in consortium if policy.permits(org.org_id)]
    if not eligible:
        return AggregatedContext(hits=(), k=k, query_id=query_id)
    if workers is not None and workers > 1 and len(eligible) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_org = list(pool.map(lambda org: _org_hits(org, q, k), eligible))
    else:
        per_org = [_org_hits(org, q, k) for org in eligible]
    merged = [h for hits in per_org for h in hits]
    merged.sort(key=lambda h: (-h.normalized_score, h.org_id, h.doc_id))
    top = [
        RetrievalHit(
            doc_id=h.doc_id,
            org_id=h.org_id,
            score=h.score,
            rank=r + 1,
            normalized_score=h.normalized_score,
        )
        for r, h in enumerate(merged[:k])
    ]
    return AggregatedContext(hits=tuple(top), k=k, query_id=query_id)
