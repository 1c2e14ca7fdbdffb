"""Flat embedding store with an exact binary round-trip format.

Rows are float32 on disk and in memory; every similarity is accumulated in
float64.  Append never rewrites existing rows: a store holds a list of row
segments, so adding rows costs only the new rows' work plus bookkeeping.

Binary layout (``TRV1``), all integers little-endian:

    magic           4 bytes  0x54 0x52 0x56 0x31
    flags           u8       bit0 unit-norm, bit1 labels present, bit2 transformed
    dim             u32
    count           u64
    config digest   32 bytes (zeros for raw stores)
    ids             count * u64
    labels          count * u32 (only when bit1 set)
    rows            count * dim * f32
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .transform import TransformPlan, transform_batch

__all__ = [
    "MAGIC",
    "EmbeddingMatrix",
    "RetrievalHit",
    "StoreError",
    "StoreFormatError",
    "BadMagicError",
    "TruncatedStoreError",
    "ZeroDimensionError",
    "DuplicateIdError",
    "make_matrix",
    "save",
    "load",
    "query_topk",
    "query_topk_batch",
    "incremental_add",
]

MAGIC = b"TRV1"

_FLAG_UNIT = 0x01
_FLAG_LABELS = 0x02
_FLAG_TRANSFORMED = 0x04

_ZERO_DIGEST = b"\x00" * 32


class StoreError(Exception):
    """Base class for store failures."""


class StoreFormatError(StoreError):
    """Malformed store bytes."""


class BadMagicError(StoreFormatError):
    pass


class TruncatedStoreError(StoreFormatError):
    pass


class ZeroDimensionError(StoreFormatError):
    pass


class DuplicateIdError(StoreError):
    def __init__(self, dup_ids):
        self.dup_ids = list(dup_ids)
        shown = ", ".join(str(i) for i in self.dup_ids[:10])
        super().__init__(f"duplicate document ids: {shown}")


@dataclass(frozen=True)
class RetrievalHit:
    doc_id: int
    org_id: int
    score: float
    rank: int
    normalized_score: Optional[float] = None

    def to_dict(self) -> dict:
        out = {
            "doc_id": self.doc_id,
            "org_id": self.org_id,
            "score": self.score,
            "rank": self.rank,
        }
        if self.normalized_score is not None:
            out["normalized_score"] = self.normalized_score
        return out


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Immutable id-addressed float32 row collection.

    ``segments`` share memory with whatever produced them; appending builds a
    new matrix around the same segment objects.
    """

    dim: int
    ids: np.ndarray                       # u64
    segments: tuple[np.ndarray, ...]      # each (n_i, dim) float32, C-contiguous
    labels: Optional[np.ndarray] = None   # u32 topic/category labels
    unit_norm: bool = True
    transformed: bool = False
    config_digest: bytes = _ZERO_DIGEST

    @property
    def count(self) -> int:
        return int(self.ids.shape[0])

    @property
    def rows(self) -> np.ndarray:
        """Consolidated (count, dim) view; copies only when segmented."""
        if len(self.segments) == 1:
            return self.segments[0]
        return np.vstack(self.segments)

    def iter_segments(self):
        return iter(self.segments)


def make_matrix(
    rows: np.ndarray,
    ids: np.ndarray | None = None,
    labels: np.ndarray | None = None,
    unit_norm: bool = True,
    transformed: bool = False,
    config_digest: bytes = _ZERO_DIGEST,
) -> EmbeddingMatrix:
    """Validated constructor; casts rows to float32 and checks invariants."""
    mat = np.ascontiguousarray(rows, dtype=np.float32)
    if mat.ndim != 2:
        raise ValueError("rows must be a 2-D array")
    count, dim = mat.shape
    if dim < 1:
        raise ZeroDimensionError("dimension must be >= 1")
    if ids is None:
        ids = np.arange(count, dtype=np.uint64)
    else:
        ids = np.ascontiguousarray(ids, dtype=np.uint64)
    if ids.shape != (count,):
        raise ValueError("ids length must match row count")
    _check_unique(ids)
    if labels is not None:
        labels = np.ascontiguousarray(labels, dtype=np.uint32)
        if labels.shape != (count,):
            raise ValueError("labels length must match row count")
    if len(config_digest) != 32:
        raise ValueError("config digest must be 32 bytes")
    if unit_norm and count:
        norms = np.linalg.norm(mat.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-3):
            raise ValueError("rows flagged unit-norm deviate from norm 1")
    return EmbeddingMatrix(
        dim=dim,
        ids=ids,
        segments=(mat,),
        labels=labels,
        unit_norm=unit_norm,
        transformed=transformed,
        config_digest=bytes(config_digest),
    )


def _check_unique(ids: np.ndarray) -> None:
    uniq, counts = np.unique(ids, return_counts=True)
    if uniq.shape[0] != ids.shape[0]:
        raise DuplicateIdError(uniq[counts > 1].tolist())


def save(matrix: EmbeddingMatrix, path: str) -> None:
    """Serialize; identical logical content yields identical bytes."""
    flags = 0
    if matrix.unit_norm:
        flags |= _FLAG_UNIT
    if matrix.labels is not None:
        flags |= _FLAG_LABELS
    if matrix.transformed:
        flags |= _FLAG_TRANSFORMED
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([flags]))
        fh.write(int(matrix.dim).to_bytes(4, "little"))
        fh.write(int(matrix.count).to_bytes(8, "little"))
        fh.write(matrix.config_digest)
        fh.write(matrix.ids.astype("<u8").tobytes())
        if matrix.labels is not None:
            fh.write(matrix.labels.astype("<u4").tobytes())
        for seg in matrix.iter_segments():
            fh.write(np.ascontiguousarray(seg, dtype="<f4").tobytes())


def load(path: str) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"not a TRV1 store: {path}")
    if len(blob) < 4 + 1 + 4 + 8 + 32:
        raise TruncatedStoreError(f"header truncated: {path}")
    flags = blob[4]
    dim = int.from_bytes(blob[5:9], "little")
    count = int.from_bytes(blob[9:17], "little")
    digest = blob[17:49]
    if dim == 0:
        raise ZeroDimensionError(f"store declares dimension 0: {path}")
    off = 49
    want_ids = count * 8
    has_labels = bool(flags & _FLAG_LABELS)
    want_labels = count * 4 if has_labels else 0
    want_rows = count * dim * 4
    expected = off + want_ids + want_labels + want_rows
    if len(blob) < expected:
        raise TruncatedStoreError(
            f"store truncated: expected {expected} bytes, found {len(blob)}: {path}"
        )
    if len(blob) > expected:
        raise StoreFormatError(f"trailing bytes after store payload: {path}")
    ids = np.frombuffer(blob, dtype="<u8", count=count, offset=off).copy()
    off += want_ids
    labels = None
    if has_labels:
        labels = np.frombuffer(blob, dtype="<u4", count=count, offset=off).copy()
        off += want_labels
    rows = (
        np.frombuffer(blob, dtype="<f4", count=count * dim, offset=off)
        .reshape(count, dim)
        .copy()
    )
    _check_unique(ids)
    return EmbeddingMatrix(
        dim=dim,
        ids=ids,
        segments=(rows,),
        labels=labels,
        unit_norm=bool(flags & _FLAG_UNIT),
        transformed=bool(flags & _FLAG_TRANSFORMED),
        config_digest=bytes(digest),
    )


def _scores_f64(matrix: EmbeddingMatrix, q: np.ndarray) -> np.ndarray:
    """Cosine numerators against every row, accumulated in float64."""
    q64 = np.asarray(q, dtype=np.float64)
    if q64.ndim != 1 or q64.shape[0] != matrix.dim:
        raise ValueError(f"query must have dimension {matrix.dim}")
    parts = []
    for seg in matrix.iter_segments():
        # chunk the f32 -> f64 widening to bound transient memory
        n = seg.shape[0]
        step = 8192
        if n <= step:
            parts.append(seg.astype(np.float64) @ q64)
        else:
            out = np.empty(n, dtype=np.float64)
            for lo in range(0, n, step):
                hi = min(lo + step, n)
                out[lo:hi] = seg[lo:hi].astype(np.float64) @ q64
            parts.append(out)
    if not parts:
        return np.empty(0, dtype=np.float64)
    return np.concatenate(parts) if len(parts) > 1 else parts[0]


def query_topk(matrix: EmbeddingMatrix, q: np.ndarray, k: int, org_id: int = 0) -> list[RetrievalHit]:
    """Exact top-k by dot-product score; ties broken by ascending doc id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if matrix.count == 0:
        return []
    scores = _scores_f64(matrix, q)
    order = np.lexsort((matrix.ids, -scores))
    top = order[: min(k, matrix.count)]
    return [
        RetrievalHit(
            doc_id=int(matrix.ids[i]),
            org_id=org_id,
            score=float(scores[i]),
            rank=r + 1,
        )
        for r, i in enumerate(top)
    ]


def query_topk_batch(
    matrix: EmbeddingMatrix, queries: np.ndarray, k: int, org_id: int = 0
) -> list[list[RetrievalHit]]:
    """Per-query results identical to looping ``query_topk``."""
    return [query_topk(matrix, q, k, org_id) for q in np.asarray(queries, dtype=np.float64)]


def incremental_add(
    matrix: EmbeddingMatrix,
    new_rows: EmbeddingMatrix,
    plan: TransformPlan | None = None,
    workers: int | None = None,
) -> EmbeddingMatrix:
    """Append ``new_rows`` (transforming them if ``plan`` given).

    Existing segments are shared, not copied, so cost scales with the number
    of new rows.  Ids must stay globally unique; collisions are reported.
    """
    if new_rows.dim != matrix.dim:
        raise ValueError("dimension mismatch between store and new rows")
    if (matrix.labels is None) != (new_rows.labels is None):
        raise ValueError("label presence must match between store and new rows")
    clash = np.intersect1d(matrix.ids, new_rows.ids)
    if clash.size:
        raise DuplicateIdError(clash.tolist())
    if new_rows.count == 0:
        return matrix
    if plan is not None:
        if new_rows.transformed:
            raise ValueError("new rows are already transformed")
        if not matrix.transformed:
            raise ValueError("cannot append transformed rows to a raw store")
        digest = plan.digest()
        if digest != matrix.config_digest:
            raise ValueError("plan does not match the store's transform digest")
        fresh = transform_batch(new_rows.rows, plan, workers=workers).astype(np.float32)
        unit = matrix.unit_norm
        transformed = True
    else:
        if matrix.transformed != new_rows.transformed:
            raise ValueError("transformed flag mismatch on append")
        fresh = np.ascontiguousarray(new_rows.rows, dtype=np.float32)
        unit = matrix.unit_norm and new_rows.unit_norm
        transformed = matrix.transformed
        digest = matrix.config_digest
    return EmbeddingMatrix(
        dim=matrix.dim,
        ids=np.concatenate([matrix.ids, new_rows.ids.astype(np.uint64)]),
        segments=matrix.segments + (fresh,),
        labels=None
        if matrix.labels is None
        else np.concatenate([matrix.labels, new_rows.labels]),
        unit_norm=unit,
        transformed=transformed,
        config_digest=digest if plan is not None else matrix.config_digest,
    )
