"""Security-side measurements over original and transformed spaces.

Everything operates on dense row matrices (one embedding per row, float32 or
float64); similarity is always the float64 dot product of unit rows.  All
sampling is driven by seeded hash streams so reports reproduce exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from .keys import PrngStream
from .ranking_metrics import QRels, ndcg_at_k
from .federation import Organization, transform_query
from .store import EmbeddingMatrix, query_topk

__all__ = [
    "angular_separation",
    "isolation_rate",
    "KnnReport",
    "knn_report",
    "entropy_bits",
    "self_mutual_information",
    "kl_divergence_bits",
    "ProbingResult",
    "probing_attack",
    "SecurityReport",
    "compute_security_report",
]

_LN2 = float(np.log(2.0))


def _uniform_indices(stream: PrngStream, n: int, bound: int) -> np.ndarray:
    """n unbiased indices in [0, bound) drawn vectorized with rejection."""
    if bound < 1:
        raise ValueError("bound must be >= 1")
    if bound == 1:
        return np.zeros(n, dtype=np.int64)
    threshold = np.uint64((2**64 // bound) * bound)
    out = np.empty(n, dtype=np.int64)
    filled = 0
    while filled < n:
        raw = stream.u64_array(n - filled)
        good = raw[raw < threshold]
        take = good[: n - filled]
        out[filled : filled + take.size] = (take % np.uint64(bound)).astype(np.int64)
        filled += take.size
    return out


def _sample_stream(seed: int, tag: bytes) -> PrngStream:
    return PrngStream(hashlib.sha256(tag + int(seed).to_bytes(8, "little")).digest())


def sampled_cross_cosines(
    a: np.ndarray, b: np.ndarray, sample: int, seed: int
) -> np.ndarray:
    """Cosines of cross pairs; exhaustive when the pair count fits the budget.

    When ``a is b`` the i == j self pairs are excluded.  Sampling uses one
    seeded stream, so (a, b, sample, seed) fully determines the result.
    """
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    na, nb = a64.shape[0], b64.shape[0]
    if na == 0 or nb == 0:
        raise ValueError("no cross pairs available")
    # self pairs are excluded for a-with-itself statistics, except in the
    # degenerate single-row case where the self pair is the only pair
    same = a is b and na > 1
    total = na * nb - (na if same else 0)
    if total <= sample:
        cos = (a64 @ b64.T).ravel()
        if same:
            keep = ~np.eye(na, dtype=bool).ravel()
            cos = cos[keep]
        return cos
    stream = _sample_stream(seed, b"pair-sample")
    ia = _uniform_indices(stream, sample, na)
    ib = _uniform_indices(stream, sample, nb)
    if same:
        # re-draw colliding self pairs until none remain
        while True:
            bad = np.flatnonzero(ia == ib)
            if not bad.size:
                break
            ib[bad] = _uniform_indices(stream, bad.size, nb)
    out = np.empty(sample, dtype=np.float64)
    step = 8192
    for lo in range(0, sample, step):
        hi = min(lo + step, sample)
        out[lo:hi] = np.einsum("ij,ij->i", a64[ia[lo:hi]], b64[ib[lo:hi]])
    return out


def angular_separation(
    a: np.ndarray, b: np.ndarray, sample: int = 10**6, seed: int = 0
) -> tuple[float, float]:
    """(mean angle in degrees, mean signed cosine) over cross pairs."""
    cos = sampled_cross_cosines(a, b, sample, seed)
    angles = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return float(angles.mean()), float(cos.mean())


def isolation_rate(
    a: np.ndarray, b: np.ndarray, tau: float = 0.1, sample: int = 10**6, seed: int = 0
) -> float:
    """Fraction of cross pairs with cosine strictly below ``tau``."""
    cos = sampled_cross_cosines(a, b, sample, seed)
    return float(np.mean(cos < tau))


def _topk_neighbors(rows: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest rows (cosine, self excluded) per row.

    Equal scores order by ascending index.  For large stores the boundary is
    located with a partition, which is exact except for exact float ties at
    position k (continuous data never produces those).
    """
    n = rows.shape[0]
    if k >= n:
        raise ValueError("k must be smaller than the number of rows")
    r64 = np.asarray(rows, dtype=np.float64)
    out = np.empty((n, k), dtype=np.int64)
    step = max(1, min(512, n))
    small = n <= 4096
    for lo in range(0, n, step):
        hi = min(lo + step, n)
        scores = r64[lo:hi] @ r64.T
        scores[np.arange(hi - lo), np.arange(lo, hi)] = -np.inf
        if small:
            order = np.argsort(-scores, axis=1, kind="stable")
            out[lo:hi] = order[:, :k]
        else:
            cand = np.argpartition(-scores, k, axis=1)[:, : 2 * k]
            for r in range(hi - lo):
                c = cand[r]
                sel = c[np.lexsort((c, -scores[r, c]))][:k]
                out[lo + r] = sel
    return out


@dataclass(frozen=True)
class KnnReport:
    """Neighborhood composition before and after transformation."""

    k: int
    org_ids: tuple[int, ...]
    purity_orig: dict[int, float]
    purity_trans: dict[int, float]
    preservation: dict[int, float]
    disturbance: dict[int, float]        # purity_trans - purity_orig per org

    @property
    def purity_trans_mean(self) -> float:
        return sum(self.purity_trans.values()) / len(self.purity_trans)

    @property
    def purity_orig_mean(self) -> float:
        return sum(self.purity_orig.values()) / len(self.purity_orig)

    @property
    def preservation_mean(self) -> float:
        return sum(self.preservation.values()) / len(self.preservation)

    @property
    def disturbance_mean(self) -> float:
        return sum(self.disturbance.values()) / len(self.disturbance)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "org_ids": list(self.org_ids),
            "purity_orig": {str(o): v for o, v in self.purity_orig.items()},
            "purity_trans": {str(o): v for o, v in self.purity_trans.items()},
            "preservation": {str(o): v for o, v in self.preservation.items()},
            "disturbance": {str(o): v for o, v in self.disturbance.items()},
            "purity_trans_mean": self.purity_trans_mean,
            "purity_orig_mean": self.purity_orig_mean,
            "preservation_mean": self.preservation_mean,
            "disturbance_mean": self.disturbance_mean,
        }


def knn_report(
    orig: np.ndarray, trans: np.ndarray, org_of: np.ndarray, k: int = 20
) -> KnnReport:
    """Exact k-NN purity/preservation over the pooled union of all orgs.

    Purity of a point is the same-org fraction of its k neighbors; values are
    averaged per org.  Preservation is the overlap |NN_orig ∩ NN_trans| / k.
    """
    org_of = np.asarray(org_of)
    if orig.shape[0] != trans.shape[0] or orig.shape[0] != org_of.shape[0]:
        raise ValueError("orig, trans and org_of must align row-wise")
    nn_orig = _topk_neighbors(orig, k)
    nn_trans = _topk_neighbors(trans, k)
    same_orig = (org_of[nn_orig] == org_of[:, None]).mean(axis=1)
    same_trans = (org_of[nn_trans] == org_of[:, None]).mean(axis=1)
    overlap = np.empty(orig.shape[0], dtype=np.float64)
    for i in range(orig.shape[0]):
        overlap[i] = len(set(nn_orig[i]) & set(nn_trans[i])) / k
    org_ids = tuple(int(o) for o in np.unique(org_of))
    p_o: dict[int, float] = {}
    p_t: dict[int, float] = {}
    pres: dict[int, float] = {}
    dist: dict[int, float] = {}
    for org in org_ids:
        mask = org_of == org
        p_o[org] = float(same_orig[mask].mean())
        p_t[org] = float(same_trans[mask].mean())
        pres[org] = float(overlap[mask].mean())
        dist[org] = p_t[org] - p_o[org]
    return KnnReport(
        k=k,
        org_ids=org_ids,
        purity_orig=p_o,
        purity_trans=p_t,
        preservation=pres,
        disturbance=dist,
    )


def entropy_bits(rows: np.ndarray, bins: int = 1000) -> tuple[float, np.ndarray]:
    """(mean, per-dim) Shannon entropy of equal-width histograms, in bits.

    Bin edges span the observed [min, max] of each dimension; a constant
    dimension carries zero entropy.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    r64 = np.asarray(rows, dtype=np.float64)
    n, d = r64.shape
    if n == 0:
        raise ValueError("entropy of an empty sample is undefined")
    per_dim = np.zeros(d, dtype=np.float64)
    for j in range(d):
        x = r64[:, j]
        lo, hi = float(x.min()), float(x.max())
        if hi == lo:
            continue
        idx = np.minimum(((x - lo) * (bins / (hi - lo))).astype(np.int64), bins - 1)
        counts = np.bincount(idx, minlength=bins)
        p = counts[counts > 0] / n
        per_dim[j] = float(-(p * np.log2(p)).sum())
    return float(per_dim.mean()), per_dim


def _strict_marginal_counts(v: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Per point i: #{j : |v_j - v_i| < eps_i}, self included.

    Compares computed differences, exactly like the joint max-norm distance
    that produced eps; a searchsorted on v_i ± eps_i would round the bounds
    differently and miscount points sitting exactly at distance eps.
    """
    n = v.shape[0]
    counts = np.empty(n, dtype=np.int64)
    step = max(1, (1 << 20) // max(n, 1))
    buf = np.empty((min(step, n), n), dtype=np.float64)
    mask = np.empty_like(buf, dtype=bool)
    for lo in range(0, n, step):
        hi = min(lo + step, n)
        d = np.subtract(v[None, :], v[lo:hi, None], out=buf[: hi - lo])
        np.abs(d, out=d)
        np.less(d, eps[lo:hi, None], out=mask[: hi - lo])
        counts[lo:hi] = np.count_nonzero(mask[: hi - lo], axis=1)
    return counts


def _ksg_mi_bits(x: np.ndarray, y: np.ndarray, knn: int) -> float:
    """Kraskov kNN mutual information (nats -> bits) for one scalar pair."""
    n = x.shape[0]
    pts = np.column_stack([x, y])
    tree = cKDTree(pts)
    eps = tree.query(pts, k=knn + 1, p=np.inf)[0][:, knn]
    # counts strictly within eps in each marginal (self included), matching
    # psi(n_x + 1) with n_x excluding the point itself
    nx = np.maximum(_strict_marginal_counts(x, eps), 1)
    ny = np.maximum(_strict_marginal_counts(y, eps), 1)
    mi_nats = digamma(knn) + digamma(n) - float(np.mean(digamma(nx) + digamma(ny)))
    return mi_nats / _LN2


def self_mutual_information(
    orig: np.ndarray,
    trans: np.ndarray,
    weights: np.ndarray | None = None,
    knn: int = 3,
) -> tuple[float, np.ndarray]:
    """Variance-weighted mean of per-dimension MI(orig_j, trans_j), in bits.

    Rows must correspond one-to-one (same entity before/after).  Weights
    default to the original per-dimension variances, normalized.
    """
    o64 = np.asarray(orig, dtype=np.float64)
    t64 = np.asarray(trans, dtype=np.float64)
    if o64.shape != t64.shape:
        raise ValueError("orig and trans must have identical shape")
    n, d = o64.shape
    if n < knn + 1:
        raise ValueError(f"need at least {knn + 1} samples for knn={knn}")
    if weights is None:
        weights = o64.var(axis=0)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (d,):
        raise ValueError("weights must have one entry per dimension")
    total = float(weights.sum())
    weights = np.full(d, 1.0 / d) if total <= 0 else weights / total
    per_dim = np.empty(d, dtype=np.float64)
    for j in range(d):
        per_dim[j] = _ksg_mi_bits(o64[:, j], t64[:, j], knn)
    return float(np.dot(weights, per_dim)), per_dim


def kl_divergence_bits(
    p_rows: np.ndarray, q_rows: np.ndarray, bins: int = 1000, epsilon: float = 1e-10
) -> tuple[float, np.ndarray]:
    """(mean, per-dim) histogram KL(P || Q) in bits over shared bin edges.

    Histograms are epsilon-smoothed and renormalized, so support mismatches
    give large but finite values; identical samples give exactly zero.
    """
    p64 = np.asarray(p_rows, dtype=np.float64)
    q64 = np.asarray(q_rows, dtype=np.float64)
    if p64.shape[1] != q64.shape[1]:
        raise ValueError("dimension mismatch")
    d = p64.shape[1]
    per_dim = np.empty(d, dtype=np.float64)
    for j in range(d):
        x, y = p64[:, j], q64[:, j]
        lo = min(float(x.min()), float(y.min()))
        hi = max(float(x.max()), float(y.max()))
        if hi == lo:
            per_dim[j] = 0.0
            continue
        scale = bins / (hi - lo)
        xh = np.bincount(
            np.minimum(((x - lo) * scale).astype(np.int64), bins - 1), minlength=bins
        ).astype(np.float64)
        yh = np.bincount(
            np.minimum(((y - lo) * scale).astype(np.int64), bins - 1), minlength=bins
        ).astype(np.float64)
        p = (xh + epsilon) / (xh.sum() + epsilon * bins)
        q = (yh + epsilon) / (yh.sum() + epsilon * bins)
        per_dim[j] = float((p * np.log2(p / q)).sum())
    return float(per_dim.mean()), per_dim


@dataclass(frozen=True)
class ProbingResult:
    """Cross-key retrieval quality matrix: attacker key row, victim store column."""

    org_ids: tuple[int, ...]
    ndcg_matrix: tuple[tuple[Optional[float], ...], ...]
    within_mean: float
    cross_mean: float
    reduction: float                     # (within - cross) / within
    k: int

    def to_dict(self) -> dict:
        return {
            "org_ids": list(self.org_ids),
            "ndcg_matrix": [list(row) for row in self.ndcg_matrix],
            "within_mean": self.within_mean,
            "cross_mean": self.cross_mean,
            "reduction": self.reduction,
            "k": self.k,
        }


def probing_attack(
    consortium: Sequence[Organization],
    queries: EmbeddingMatrix,
    qrels: QRels,
    k: int = 10,
) -> ProbingResult:
    """nDCG of every (attacker key, victim store) combination.

    Cell (i, j) transforms the query set under org i's key and retrieves from
    org j's store, scored against relevance restricted to org j's documents.
    A victim column uses only queries with at least one relevant document in
    that shard.  The diagonal is the legitimate same-key baseline.
    """
    m = len(consortium)
    if m == 0:
        raise ValueError("empty consortium")
    org_ids = tuple(org.org_id for org in consortium)
    qids = [int(q) for q in queries.ids]
    qrows = queries.rows.astype(np.float64)

    transformed: list[np.ndarray] = []
    for org in consortium:
        transformed.append(
            np.stack([transform_query(org, qrows[i]) for i in range(len(qids))])
        )

    restricted: list[dict[int, dict[int, int]]] = []
    eligible: list[list[int]] = []
    for org in consortium:
        shard_ids = set(int(i) for i in org.store.ids)
        rels_j = {
            qid: {d: g for d, g in qrels.get(qid, {}).items() if d in shard_ids}
            for qid in qids
        }
        restricted.append(rels_j)
        eligible.append([qi for qi, qid in enumerate(qids) if rels_j[qid]])

    matrix: list[list[Optional[float]]] = []
    for i in range(m):
        row: list[Optional[float]] = []
        for j in range(m):
            idxs = eligible[j]
            if not idxs:
                row.append(None)
                continue
            scores = []
            for qi in idxs:
                hits = query_topk(consortium[j].store, transformed[i][qi], k)
                ranked = [h.doc_id for h in hits]
                scores.append(ndcg_at_k(ranked, restricted[j][qids[qi]], k))
            row.append(sum(scores) / len(scores))
        matrix.append(row)

    diag = [matrix[i][i] for i in range(m) if matrix[i][i] is not None]
    off = [
        matrix[i][j]
        for i in range(m)
        for j in range(m)
        if i != j and matrix[i][j] is not None
    ]
    within = sum(diag) / len(diag) if diag else float("nan")
    cross = sum(off) / len(off) if off else float("nan")
    reduction = (within - cross) / within if within else float("nan")
    return ProbingResult(
        org_ids=org_ids,
        ndcg_matrix=tuple(tuple(row) for row in matrix),
        within_mean=within,
        cross_mean=cross,
        reduction=reduction,
        k=k,
    )


@dataclass(frozen=True)
class SecurityReport:
    """Full cross-org security measurement set for one consortium."""

    org_ids: tuple[int, ...]
    tau: float
    sample: int
    seed: int
    mean_angle_deg: tuple[tuple[float, ...], ...]     # m x m, diag = within-org
    mean_cos: tuple[tuple[float, ...], ...]
    isolation: tuple[tuple[float, ...], ...]
    knn: KnnReport
    entropy_orig: dict[int, float]
    entropy_trans: dict[int, float]
    self_mi: dict[int, float]
    kl_bits: dict[int, float]

    def cross_values(self, matrix_name: str) -> list[float]:
        matrix = getattr(self, matrix_name)
        m = len(self.org_ids)
        return [matrix[i][j] for i in range(m) for j in range(i + 1, m)]

    def to_dict(self) -> dict:
        return {
            "org_ids": list(self.org_ids),
            "tau": self.tau,
            "sample": self.sample,
            "seed": self.seed,
            "mean_angle_deg": [list(r) for r in self.mean_angle_deg],
            "mean_cos": [list(r) for r in self.mean_cos],
            "isolation": [list(r) for r in self.isolation],
            "knn": self.knn.to_dict(),
            "entropy_orig": {str(o): v for o, v in self.entropy_orig.items()},
            "entropy_trans": {str(o): v for o, v in self.entropy_trans.items()},
            "self_mi": {str(o): v for o, v in self.self_mi.items()},
            "kl_bits": {str(o): v for o, v in self.kl_bits.items()},
        }


def compute_security_report(
    org_ids: Sequence[int],
    orig_stores: Sequence[EmbeddingMatrix],
    trans_stores: Sequence[EmbeddingMatrix],
    tau: float = 0.1,
    knn_k: int = 20,
    sample: int = 10**5,
    seed: int = 0,
    mi_knn: int = 3,
    bins: int = 1000,
) -> SecurityReport:
    """Assemble every security metric for aligned orig/trans store lists.

    Rows of each org's orig and trans stores must correspond by position
    (same ids in the same order) for MI and preservation to be meaningful.
    """
    m = len(org_ids)
    if not (len(orig_stores) == len(trans_stores) == m) or m == 0:
        raise ValueError("org_ids, orig_stores and trans_stores must align")
    for o, t in zip(orig_stores, trans_stores):
        if not np.array_equal(o.ids, t.ids):
            raise ValueError("orig/trans stores must hold identical id sequences")
    trans_rows = [s.rows.astype(np.float64) for s in trans_stores]
    orig_rows = [s.rows.astype(np.float64) for s in orig_stores]

    angle = [[0.0] * m for _ in range(m)]
    cosm = [[0.0] * m for _ in range(m)]
    iso = [[0.0] * m for _ in range(m)]
    for i in range(m):
        for j in range(i, m):
            a = trans_rows[i]
            b = trans_rows[i] if i == j else trans_rows[j]
            pair_seed = seed * 1000003 + i * 1009 + j
            ang, mc = angular_separation(a, b, sample=sample, seed=pair_seed)
            rate = isolation_rate(a, b, tau=tau, sample=sample, seed=pair_seed)
            angle[i][j] = angle[j][i] = ang
            cosm[i][j] = cosm[j][i] = mc
            iso[i][j] = iso[j][i] = rate

    pooled_orig = np.vstack(orig_rows)
    pooled_trans = np.vstack(trans_rows)
    org_of = np.concatenate(
        [np.full(orig_stores[i].count, org_ids[i], dtype=np.int64) for i in range(m)]
    )
    knn = knn_report(pooled_orig, pooled_trans, org_of, k=knn_k)

    entropy_o: dict[int, float] = {}
    entropy_t: dict[int, float] = {}
    smi: dict[int, float] = {}
    kl: dict[int, float] = {}
    for i, oid in enumerate(org_ids):
        entropy_o[int(oid)] = entropy_bits(orig_rows[i], bins=bins)[0]
        entropy_t[int(oid)] = entropy_bits(trans_rows[i], bins=bins)[0]
        smi[int(oid)] = self_mutual_information(orig_rows[i], trans_rows[i], knn=mi_knn)[0]
        kl[int(oid)] = kl_divergence_bits(orig_rows[i], trans_rows[i], bins=bins)[0]

    return SecurityReport(
        org_ids=tuple(int(o) for o in org_ids),
        tau=tau,
        sample=sample,
        seed=seed,
        mean_angle_deg=tuple(tuple(r) for r in angle),
        mean_cos=tuple(tuple(r) for r in cosm),
        isolation=tuple(tuple(r) for r in iso),
        knn=knn,
        entropy_orig=entropy_o,
        entropy_trans=entropy_t,
        self_mi=smi,
        kl_bits=kl,
    )
