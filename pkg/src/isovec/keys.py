"""Deterministic derivation of per-organization transform parameters.

Everything here is a pure function of a 256-bit organization key. The
derivation chain (hash-counter PRNG -> Gaussian / integer draws -> shuffles,
QR, offsets) is fixed byte-for-byte: two builds given the same key must
produce identical permutations, rotations and offsets, because remote stores
are only useful if every party derives the same geometry.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "KEY_BYTES",
    "OrgKey",
    "PrngStream",
    "TransformConfig",
    "StageParams",
    "derive_seed",
    "derive_permutation",
    "derive_orthogonal",
    "derive_offsets",
    "derive_blinding_noise",
    "derive_stage_params",
    "generate_key",
    "read_key_file",
    "write_key_file",
]

KEY_BYTES = 32
_SEED_BYTES = 32

# Domain-separation labels. Adding a new derived quantity means adding a new
# label here, never reusing one.
LABEL_PERMUTATION = b"perm"
LABEL_ORTHOGONAL = b"orth"
LABEL_OFFSETS = b"offs"
LABEL_BLINDING = b"blin"

_TWO_NEG_53 = 2.0**-53


@dataclass(frozen=True)
class OrgKey:
    """256-bit organization secret. Never serialized into stores or reports."""

    key: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.key, bytes) or len(self.key) != KEY_BYTES:
            raise ValueError(f"organization key must be exactly {KEY_BYTES} bytes")

    def fingerprint(self) -> bytes:
        """First 8 bytes of SHA-256(key); safe to embed in metadata."""
        return hashlib.sha256(self.key).digest()[:8]

    def is_all_zero(self) -> bool:
        return self.key == b"\x00" * KEY_BYTES


@dataclass(frozen=True)
class TransformConfig:
    """Public parameters of the multi-stage transform.

    Only ``dim`` and ``stages`` influence which pseudo-random draws are made;
    the remaining fields scale or gate how the drawn values are applied, so
    ablations share identical derived permutations/rotations/offsets.
    """

    dim: int
    stages: int = 3
    beta: float = 0.1
    alpha: float = 0.1
    enable_blinding: bool = True
    enable_permutation: bool = True
    offset_sigma: float = 0.1

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.offset_sigma < 0:
            raise ValueError("offset_sigma must be >= 0")

    def canonical_dict(self) -> dict:
        return {
            "dim": self.dim,
            "stages": self.stages,
            "beta": self.beta,
            "alpha": self.alpha,
            "enable_blinding": self.enable_blinding,
            "enable_permutation": self.enable_permutation,
            "offset_sigma": self.offset_sigma,
        }


@dataclass(frozen=True, eq=False)
class StageParams:
    """Derived parameters for one stage (1-based ``index``)."""

    index: int
    pi: np.ndarray          # permutation of range(dim)
    w: np.ndarray           # orthogonal dim x dim rotation
    b: np.ndarray           # pre-nonlinearity offset
    c: np.ndarray           # post-rotation offset
    blind_seed_in: bytes    # 32-byte prefix for input-side blinding
    blind_seed_out: bytes   # 32-byte prefix for output-side blinding


def derive_seed(key: bytes, label: bytes, indices: list[int] | tuple[int, ...] = ()) -> bytes:
    """SHA-256(key || label || 0x00 || idx_0 ... idx_{m-1}), each index u64 LE."""
    h = hashlib.sha256()
    h.update(key)
    h.update(label)
    h.update(b"\x00")
    for idx in indices:
        h.update(int(idx).to_bytes(8, "little"))
    return h.digest()


class PrngStream:
    """Counter-mode SHA-256 byte stream with fixed integer/Gaussian decoding.

    block_t = SHA-256(seed || t) with t a u64 little-endian counter starting
    at 0; bytes are consumed left to right.  u64 draws are 8 consecutive
    bytes, little-endian.  Gaussians come from Box-Muller over 53-bit
    uniforms; the sine term of each pair is cached so scalar and batched
    generation walk the identical sequence.
    """

    __slots__ = ("_seed", "_counter", "_buf", "_pos", "_gauss_cache")

    def __init__(self, seed: bytes) -> None:
        if len(seed) != _SEED_BYTES:
            raise ValueError(f"stream seed must be {_SEED_BYTES} bytes")
        self._seed = seed
        self._counter = 0
        self._buf = b""
        self._pos = 0
        self._gauss_cache: float | None = None

    def read(self, n: int) -> bytes:
        """Next ``n`` bytes of the stream."""
        avail = len(self._buf) - self._pos
        if avail >= n:
            out = self._buf[self._pos : self._pos + n]
            self._pos += n
            return out
        need = n - avail
        nblocks = (need + 31) // 32
        seed = self._seed
        start = self._counter
        fresh = b"".join(
            hashlib.sha256(seed + t.to_bytes(8, "little")).digest()
            for t in range(start, start + nblocks)
        )
        self._counter = start + nblocks
        out = self._buf[self._pos :] + fresh[:need]
        self._buf = fresh
        self._pos = need
        return out

    def u64(self) -> int:
        return int.from_bytes(self.read(8), "little")

    def u64_array(self, n: int) -> np.ndarray:
        return np.frombuffer(self.read(8 * n), dtype="<u8").copy()

    def uniform_range(self, bound: int) -> int:
        """Unbiased integer in [0, bound) via rejection sampling.

        Draws with value >= floor(2^64 / bound) * bound are discarded so every
        residue is exactly equally likely.  bound == 1 returns 0 without
        consuming the stream.
        """
        if bound < 1:
            raise ValueError("bound must be >= 1")
        if bound == 1:
            return 0
        threshold = (2**64 // bound) * bound
        while True:
            u = self.u64()
            if u < threshold:
                return u % bound

    def gaussians(self, n: int) -> np.ndarray:
        """``n`` standard normal draws (float64), batch == n scalar calls."""
        out = np.empty(n, dtype=np.float64)
        start = 0
        if self._gauss_cache is not None and n > 0:
            out[0] = self._gauss_cache
            self._gauss_cache = None
            start = 1
        m = n - start
        if m > 0:
            pairs = (m + 1) // 2
            raw = self.u64_array(2 * pairs)
            # 53-bit mantissa uniform in (0, 1]; a raw zero maps to 2^-53 so
            # log() below is always finite.
            u = (raw >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53
            u[u == 0.0] = _TWO_NEG_53
            r = np.sqrt(-2.0 * np.log(u[0::2]))
            ang = (2.0 * np.pi) * u[1::2]
            inter = np.empty(2 * pairs, dtype=np.float64)
            inter[0::2] = r * np.cos(ang)
            inter[1::2] = r * np.sin(ang)
            out[start:] = inter[:m]
            if m % 2 == 1:
                self._gauss_cache = float(inter[m])
        return out

    def gaussian(self) -> float:
        return float(self.gaussians(1)[0])


def derive_permutation(key: bytes, stage: int, dim: int) -> np.ndarray:
    """Fisher-Yates permutation of range(dim) from the stage's "perm" stream."""
    stream = PrngStream(derive_seed(key, LABEL_PERMUTATION, [stage]))
    perm = np.arange(dim, dtype=np.int64)
    # Walk i from dim-1 down to 1, swapping with a uniform index in [0, i].
    for i in range(dim - 1, 0, -1):
        k = stream.uniform_range(i + 1)
        perm[i], perm[k] = perm[k], perm[i]
    return perm


def derive_orthogonal(key: bytes, stage: int, dim: int) -> np.ndarray:
    """Orthogonal dim x dim matrix from the stage's "orth" stream.

    A row-major Gaussian matrix is QR-factored (LAPACK's Householder path)
    and the Q columns are sign-flipped so diag(R) > 0, which makes the result
    unique for a given Gaussian draw regardless of QR sign conventions.
    """
    stream = PrngStream(derive_seed(key, LABEL_ORTHOGONAL, [stage]))
    g = stream.gaussians(dim * dim).reshape(dim, dim)
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diagonal(r))
    signs[signs == 0.0] = 1.0
    return q * signs


def derive_offsets(key: bytes, stage: int, dim: int, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Offset pair (b, c): 2*dim consecutive Gaussians, b first.

    Entries are scaled by sigma / sqrt(dim) so the offset *vector* has norm
    ~sigma.  Unit-norm inputs then see an O(sigma) perturbation at any
    dimension, the same order as the blinding intensity; scaling entries by
    sigma alone would grow the vector norm as sqrt(dim) and swamp the signal.
    """
    stream = PrngStream(derive_seed(key, LABEL_OFFSETS, [stage]))
    draws = stream.gaussians(2 * dim)
    scale = sigma / np.sqrt(dim)
    return draws[:dim] * scale, draws[dim:] * scale


def derive_blinding_noise(seed_prefix: bytes, v_digest: bytes, dim: int, alpha: float) -> np.ndarray:
    """Input-keyed blinding direction with exact norm ``alpha``.

    alpha == 0 returns zeros without touching any stream, so disabling
    blinding cannot shift other derived quantities.
    """
    if alpha == 0.0:
        return np.zeros(dim, dtype=np.float64)
    stream = PrngStream(hashlib.sha256(seed_prefix + v_digest).digest())
    u = stream.gaussians(dim)
    norm = float(np.linalg.norm(u))
    if norm == 0.0:  # measure-zero; fail loudly rather than divide by zero
        raise ArithmeticError("degenerate blinding draw")
    return (alpha / norm) * u


def derive_stage_params(key: OrgKey, stage: int, config: TransformConfig) -> StageParams:
    """All derived parameters for 1-based ``stage`` under ``config``.

    Blinding seeds use indices ``stage`` (input side) and ``stage + stages``
    (output side) so no two blinding applications in a plan share a prefix.
    """
    if not 1 <= stage <= config.stages:
        raise ValueError("stage index out of range")
    d = config.dim
    b, c = derive_offsets(key.key, stage, d, config.offset_sigma)
    return StageParams(
        index=stage,
        pi=derive_permutation(key.key, stage, d),
        w=derive_orthogonal(key.key, stage, d),
        b=b,
        c=c,
        blind_seed_in=derive_seed(key.key, LABEL_BLINDING, [stage]),
        blind_seed_out=derive_seed(key.key, LABEL_BLINDING, [stage + config.stages]),
    )


def generate_key(seed: int | None = None) -> OrgKey:
    """Fresh organization key; ``seed`` (u64) makes the result reproducible."""
    if seed is None:
        return OrgKey(os.urandom(KEY_BYTES))
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must fit in u64")
    stream = PrngStream(hashlib.sha256(b"keygen" + int(seed).to_bytes(8, "little")).digest())
    return OrgKey(stream.read(KEY_BYTES))


def write_key_file(path: str, key: OrgKey) -> None:
    """Write hex (64 lowercase chars + newline) or raw 32 bytes for ``.bin``."""
    if path.endswith(".bin"):
        with open(path, "wb") as fh:
            fh.write(key.key)
    else:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(key.key.hex() + "\n")


def read_key_file(path: str) -> OrgKey:
    if path.endswith(".bin"):
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) != KEY_BYTES:
            raise ValueError(f"raw key file must contain exactly {KEY_BYTES} bytes")
        return OrgKey(raw)
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    stripped = text.strip()
    if len(stripped) != 2 * KEY_BYTES or not all(ch in "0123456789abcdef" for ch in stripped):
        raise ValueError("key file must hold 64 lowercase hex characters")
    return OrgKey(bytes.fromhex(stripped))
