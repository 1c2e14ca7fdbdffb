"""AES-GCM sealed store baseline: decrypt everything, then rank.

The sealed store answers the same queries as a plaintext store but must
decrypt every row per query, which is both the latency cost and the exposure
this baseline quantifies.  One store key must never seal two stores, because
nonces are derived from row indices.

Binary layout (``TRS1``), integers little-endian unless noted:

    magic      4 bytes  "TRS1"
    dim        u32
    count      u64
    key id     8 bytes (SHA-256 of the store key, truncated)
    rows       count * [nonce 12 bytes (row index, big-endian) |
                        u32 ciphertext length | ciphertext + tag]

Row plaintext is the u64 LE doc id followed by dim little-endian float32
coordinates, so decryption alone recovers an addressable store.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .store import EmbeddingMatrix, RetrievalHit, make_matrix, query_topk

__all__ = [
    "SEALED_MAGIC",
    "SealedStoreError",
    "RowAuthenticationError",
    "SealedStore",
    "seal",
    "open_sealed",
    "save_sealed",
    "load_sealed",
    "aead_query",
    "naive_query",
]

SEALED_MAGIC = b"TRS1"
_NONCE_BYTES = 12


class SealedStoreError(Exception):
    pass


class RowAuthenticationError(SealedStoreError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"authentication failed for row {row}")


@dataclass(frozen=True, eq=False)
class SealedStore:
    dim: int
    key_id: bytes
    rows_ct: tuple[bytes, ...]

    @property
    def count(self) -> int:
        return len(self.rows_ct)


def _row_nonce(index: int) -> bytes:
    return index.to_bytes(_NONCE_BYTES, "big")


def _key_id(key: bytes) -> bytes:
    return hashlib.sha256(key).digest()[:8]


def seal(matrix: EmbeddingMatrix, key: bytes) -> SealedStore:
    """Encrypt every row (id + coordinates) under AES-GCM-256."""
    if len(key) != 32:
        raise ValueError("store key must be 32 bytes")
    aead = AESGCM(key)
    rows = matrix.rows
    cts = []
    for i in range(matrix.count):
        plaintext = int(matrix.ids[i]).to_bytes(8, "little") + np.ascontiguousarray(
            rows[i], dtype="<f4"
        ).tobytes()
        cts.append(aead.encrypt(_row_nonce(i), plaintext, None))
    return SealedStore(dim=matrix.dim, key_id=_key_id(key), rows_ct=tuple(cts))


def open_sealed(sealed: SealedStore, key: bytes) -> tuple[EmbeddingMatrix, int]:
    """Decrypt the full store; returns (matrix, rows decrypted).

    Any failed tag aborts with the offending row index.
    """
    if _key_id(key) != sealed.key_id:
        raise SealedStoreError("store key id does not match")
    aead = AESGCM(key)
    ids = np.empty(sealed.count, dtype=np.uint64)
    rows = np.empty((sealed.count, sealed.dim), dtype=np.float32)
    for i, ct in enumerate(sealed.rows_ct):
        try:
            plaintext = aead.decrypt(_row_nonce(i), ct, None)
        except InvalidTag as exc:
            raise RowAuthenticationError(i) from exc
        ids[i] = int.from_bytes(plaintext[:8], "little")
        rows[i] = np.frombuffer(plaintext, dtype="<f4", offset=8)
    matrix = make_matrix(rows, ids=ids, unit_norm=False)
    return matrix, sealed.count


def aead_query(
    sealed: SealedStore, key: bytes, q: np.ndarray, k: int, org_id: int = 0
) -> tuple[list[RetrievalHit], int]:
    """Decrypt-then-rank; returns (hits, plaintext exposure count).

    The exposure count is the number of rows decrypted to serve this one
    query — always the full store size for this baseline.
    """
    matrix, exposed = open_sealed(sealed, key)
    return query_topk(matrix, q, k, org_id=org_id), exposed


def naive_query(matrix: EmbeddingMatrix, q: np.ndarray, k: int, org_id: int = 0):
    """Plaintext flat scan; the reference both baselines are compared against."""
    return query_topk(matrix, q, k, org_id=org_id)


def save_sealed(sealed: SealedStore, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(SEALED_MAGIC)
        fh.write(int(sealed.dim).to_bytes(4, "little"))
        fh.write(int(sealed.count).to_bytes(8, "little"))
        fh.write(sealed.key_id)
        for i, ct in enumerate(sealed.rows_ct):
            fh.write(_row_nonce(i))
            fh.write(len(ct).to_bytes(4, "little"))
            fh.write(ct)


def load_sealed(path: str) -> SealedStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SEALED_MAGIC:
        raise SealedStoreError(f"not a TRS1 sealed store: {path}")
    if len(blob) < 24:
        raise SealedStoreError(f"sealed store header truncated: {path}")
    dim = int.from_bytes(blob[4:8], "little")
    count = int.from_bytes(blob[8:16], "little")
    key_id = blob[16:24]
    if dim == 0:
        raise SealedStoreError(f"sealed store declares dimension 0: {path}")
    off = 24
    cts = []
    for i in range(count):
        if off + _NONCE_BYTES + 4 > len(blob):
            raise SealedStoreError(f"sealed store truncated at row {i}: {path}")
        nonce = blob[off : off + _NONCE_BYTES]
        if nonce != _row_nonce(i):
            raise SealedStoreError(f"unexpected nonce at row {i}: {path}")
        off += _NONCE_BYTES
        ln = int.from_bytes(blob[off : off + 4], "little")
        off += 4
        if off + ln > len(blob):
            raise SealedStoreError(f"sealed store truncated at row {i}: {path}")
        cts.append(blob[off : off + ln])
        off += ln
    if off != len(blob):
        raise SealedStoreError(f"trailing bytes after sealed payload: {path}")
    return SealedStore(dim=dim, key_id=key_id, rows_ct=tuple(cts))
