"""Seeded synthetic retrieval corpus: topic clusters on the unit sphere.

Generation is a pure function of the ``SynthSpec``; the draw order (centers, then
documents topic by topic, then queries topic by topic) is part of the
contract so regenerated corpora are byte-identical.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .keys import PrngStream
from .store import EmbeddingMatrix, make_matrix

__all__ = ["SynthSpec", "SynthCorpus", "generate"]


@dataclass(frozen=True)
class SynthSpec:
    dim: int = 768
    topics: int = 20
    per_topic: int = 500
    noise_sigma: float = 0.35
    queries_per_topic: int = 5
    seed: int = 42

    def __post_init__(self) -> None:
        if min(self.dim, self.topics, self.per_topic, self.queries_per_topic) < 1:
            raise ValueError("dim, topics, per_topic and queries_per_topic must be >= 1")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be > 0")


@dataclass(frozen=True, eq=False)
class SynthCorpus:
    docs: EmbeddingMatrix
    queries: EmbeddingMatrix
    qrels: dict[int, dict[int, int]]   # query id -> {doc id: grade}


def _unit(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ArithmeticError("degenerate zero draw")
    return rows / norms


def generate(spec: SynthSpec) -> SynthCorpus:
    """Documents and queries scattered around shared topic centers.

    Every vector is unit-normalize(center + noise_sigma * g / sqrt(dim)) with
    g standard normal, so ``noise_sigma`` is the expected *norm* of the noise
    relative to the unit center; at noise 0 every vector equals its center.
    Relevance marks all same-topic documents at grade 1.
    """
    stream = PrngStream(
        hashlib.sha256(b"synth-corpus" + int(spec.seed).to_bytes(8, "little")).digest()
    )
    d, t = spec.dim, spec.topics
    scale = spec.noise_sigma / np.sqrt(d)

    centers = _unit(stream.gaussians(t * d).reshape(t, d))

    doc_rows = np.empty((t * spec.per_topic, d), dtype=np.float64)
    doc_labels = np.repeat(np.arange(t, dtype=np.uint32), spec.per_topic)
    for topic in range(t):
        noise = stream.gaussians(spec.per_topic * d).reshape(spec.per_topic, d)
        lo = topic * spec.per_topic
        doc_rows[lo : lo + spec.per_topic] = _unit(centers[topic] + scale * noise)

    nq = t * spec.queries_per_topic
    query_rows = np.empty((nq, d), dtype=np.float64)
    query_labels = np.repeat(np.arange(t, dtype=np.uint32), spec.queries_per_topic)
    for topic in range(t):
        if spec.queries_per_topic == 0:
            continue
        noise = stream.gaussians(spec.queries_per_topic * d).reshape(spec.queries_per_topic, d)
        lo = topic * spec.queries_per_topic
        query_rows[lo : lo + spec.queries_per_topic] = _unit(centers[topic] + scale * noise)

    docs = make_matrix(doc_rows, labels=doc_labels, unit_norm=True)
    queries = make_matrix(query_rows, labels=query_labels, unit_norm=True)

    qrels: dict[int, dict[int, int]] = {}
    doc_ids_by_topic = {
        topic: docs.ids[doc_labels == topic].tolist() for topic in range(t)
    }
    for qi in range(nq):
        topic = int(query_labels[qi])
        qrels[int(queries.ids[qi])] = {int(did): 1 for did in doc_ids_by_topic[topic]}
    return SynthCorpus(docs=docs, queries=queries, qrels=qrels)
