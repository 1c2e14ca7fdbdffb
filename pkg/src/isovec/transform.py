"""Key-parameterized multi-stage embedding transform.

Each stage permutes, blinds, squashes, rotates and re-blinds a unit vector,
then normalizes back onto the sphere.  All arithmetic is double precision and
strictly per-row: batching over rows must not change a single output bit, so
no row ever goes through a blocked matrix-matrix product.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .keys import OrgKey, StageParams, TransformConfig, derive_blinding_noise, derive_stage_params

__all__ = [
    "TransformPlan",
    "derive_plan",
    "bounded_nonlinearity",
    "vector_digest",
    "blind",
    "apply_stage",
    "transform",
    "transform_batch",
]

_INT64_MAX_F = float(2**63 - 1)


@dataclass(frozen=True, eq=False)
class TransformPlan:
    """Fully derived, key-free description of a transform.

    Holds only material that is safe to keep around after key derivation; the
    organization key itself is never stored, only its 8-byte fingerprint.
    """

    config: TransformConfig
    stages: tuple[StageParams, ...]
    key_fingerprint: bytes

    def canonical_dict(self) -> dict:
        return {
            "config": self.config.canonical_dict(),
            "key_fingerprint": self.key_fingerprint.hex(),
        }

    def digest(self) -> bytes:
        """32-byte digest binding a store to the plan that produced it."""
        blob = json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("ascii")).digest()


def derive_plan(key: OrgKey, config: TransformConfig) -> TransformPlan:
    stages = tuple(derive_stage_params(key, j, config) for j in range(1, config.stages + 1))
    return TransformPlan(config=config, stages=stages, key_fingerprint=key.fingerprint())


def bounded_nonlinearity(x: np.ndarray | float, beta: float) -> np.ndarray | float:
    """tanh(beta * x) / beta: odd, bounded by 1/beta, slope <= 1 everywhere."""
    return np.tanh(beta * x) / beta


def vector_digest(v: np.ndarray) -> bytes:
    """SHA-256 of the vector quantized on a 1e-4 grid (round half to even).

    Quantizing before hashing makes the digest stable under sub-1e-9 float
    jitter, so blinding noise does not change when a vector is re-encoded.
    """
    arr = np.ascontiguousarray(v, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector digest requires finite coordinates")
    scaled = np.rint(arr * 1e4)
    if np.any(np.abs(scaled) > _INT64_MAX_F):
        raise OverflowError("coordinate too large to quantize")
    return hashlib.sha256(scaled.astype("<i8").tobytes()).digest()


def blind(v: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Add noise but subtract its mean, leaving the coordinate sum unchanged."""
    return v + (delta - delta.mean())


def apply_stage(
    v: np.ndarray,
    stage: StageParams,
    config: TransformConfig,
    normalize: bool = True,
) -> np.ndarray:
    """One stage applied to a single vector.

    Step order: permute, input blinding, offset + bounded nonlinearity,
    rotate + offset, output blinding, inverse permute, normalize.  Ablation
    flags skip their steps without re-deriving anything.  ``normalize=False``
    exposes the pre-normalization map (used for contraction measurements).
    """
    d = config.dim
    permuting = config.enable_permutation
    blinding = config.enable_blinding and config.alpha > 0.0

    u = v[stage.pi] if permuting else v
    if blinding:
        delta = derive_blinding_noise(stage.blind_seed_in, vector_digest(u), d, config.alpha)
        u = blind(u, delta)
    u = bounded_nonlinearity(u + stage.b, config.beta)
    u = stage.w @ u + stage.c
    if blinding:
        delta = derive_blinding_noise(stage.blind_seed_out, vector_digest(u), d, config.alpha)
        u = blind(u, delta)
    if permuting:
        out = np.empty_like(u)
        out[stage.pi] = u
        u = out
    if not normalize:
        return u
    norm = float(np.linalg.norm(u))
    if norm == 0.0:
        raise ValueError("degenerate vector: zero norm after stage")
    return u / norm


def transform(v: np.ndarray, plan: TransformPlan) -> np.ndarray:
    """Full multi-stage transform of one vector onto the unit sphere."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != plan.config.dim:
        raise ValueError(f"expected a vector of dimension {plan.config.dim}")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValueError("degenerate vector: zero norm input")
    u = arr / norm
    for stage in plan.stages:
        u = apply_stage(u, stage, plan.config)
    return u


def transform_batch(rows: np.ndarray, plan: TransformPlan, workers: int | None = None) -> np.ndarray:
    """Transform each row independently; output row i == transform(rows[i]).

    ``workers`` > 1 splits rows across threads; results are assembled by row
    index so the worker count never affects the produced bytes.
    """
    mat = np.asarray(rows, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != plan.config.dim:
        raise ValueError(f"expected an array of shape (count, {plan.config.dim})")
    count = mat.shape[0]
    out = np.empty_like(mat)
    if workers is None or workers <= 1 or count < 2:
        for i in range(count):
            out[i] = transform(mat[i], plan)
        return out
    chunk = (count + workers - 1) // workers

    def run(lo: int) -> None:
        hi = min(lo + chunk, count)
        for i in range(lo, hi):
            out[i] = transform(mat[i], plan)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(run, range(0, count, chunk)))
    return out
