"""Single-vector and batch transform behavior."""

from __future__ import annotations

import hashlib
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isovec.keys import OrgKey, StageParams, TransformConfig, generate_key
from isovec.transform import (
    apply_stage,
    blind,
    bounded_nonlinearity,
    derive_plan,
    transform,
    transform_batch,
    vector_digest,
)

KEY = OrgKey(bytes(range(32)))


def unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


@pytest.fixture(scope="module")
def plan768():
    return derive_plan(KEY, TransformConfig(dim=768))


# -- bounded nonlinearity --------------------------------------------------


def test_nonlinearity_zero():
    for beta in (0.01, 0.1, 1.0, 10.0):
        assert bounded_nonlinearity(0.0, beta) == 0.0


def test_nonlinearity_golden():
    assert bounded_nonlinearity(1.0, 0.1) == pytest.approx(0.9966799462495581, abs=1e-15)


def test_nonlinearity_odd(rng):
    x = rng.standard_normal(100) * 5
    for beta in (0.05, 0.1, 2.0):
        assert np.allclose(
            bounded_nonlinearity(-x, beta), -bounded_nonlinearity(x, beta), atol=1e-15
        )


def test_nonlinearity_bounded(rng):
    x = rng.standard_normal(1000) * 100
    assert np.all(np.abs(bounded_nonlinearity(x, 0.1)) <= 10.0)


# -- vector digest ---------------------------------------------------------


def test_digest_zero_vector():
    # 4 int64 zeros -> 32 zero bytes
    assert vector_digest(np.zeros(4)) == hashlib.sha256(b"\x00" * 32).digest()
    assert vector_digest(np.zeros(4)).hex().startswith("66687aad")


def test_digest_quantization_cell():
    v = np.array([0.1, 0.2, 0.3, 0.4])
    assert vector_digest(v) == vector_digest(v + 1e-9)


def test_digest_sensitivity():
    v = np.array([0.1, 0.2, 0.3, 0.4])
    moved = v.copy()
    moved[2] += 1e-3
    assert vector_digest(v) != vector_digest(moved)


def test_digest_rejects_nonfinite():
    with pytest.raises(ValueError):
        vector_digest(np.array([0.0, np.inf]))
    with pytest.raises(ValueError):
        vector_digest(np.array([np.nan, 0.0]))


def test_digest_rejects_overflow():
    with pytest.raises((ValueError, OverflowError)):
        vector_digest(np.array([1e18]))


# -- blinding correction ---------------------------------------------------


def test_blind_constant_delta_cancels(rng):
    v = rng.standard_normal(16)
    assert np.allclose(blind(v, np.full(16, 0.37)), v, atol=1e-12)


def test_blind_preserves_mean(rng):
    v = rng.standard_normal(64)
    delta = rng.standard_normal(64)
    assert blind(v, delta).mean() == pytest.approx(v.mean(), abs=1e-12)


def test_blind_zero_delta_identity(rng):
    v = rng.standard_normal(8)
    assert np.array_equal(blind(v, np.zeros(8)), v)


# -- single stage ----------------------------------------------------------


def test_stage_identity_ablation():
    # all sub-transforms forced degenerate: output must reduce to v/||v||
    d = 32
    cfg = TransformConfig(
        dim=d, beta=1e-6, alpha=0.0, enable_blinding=False,
        enable_permutation=False, offset_sigma=0.0,
    )
    stage = StageParams(
        index=1,
        pi=np.arange(d),
        w=np.eye(d),
        b=np.zeros(d),
        c=np.zeros(d),
        blind_seed_in=bytes(32),
        blind_seed_out=bytes(32),
    )
    v = np.random.default_rng(1).standard_normal(d)
    out = apply_stage(v, stage, cfg)
    assert np.linalg.norm(out - unit(v)) < 1e-3


def test_stage_output_unit_norm(rng):
    cfg = TransformConfig(dim=64)
    plan = derive_plan(KEY, cfg)
    v = unit(rng.standard_normal(64))
    out = apply_stage(v, plan.stages[0], cfg)
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)


def test_stage_deterministic(rng):
    cfg = TransformConfig(dim=64)
    plan = derive_plan(KEY, cfg)
    v = unit(rng.standard_normal(64))
    assert np.array_equal(apply_stage(v, plan.stages[0], cfg),
                          apply_stage(v, plan.stages[0], cfg))


# -- full transform --------------------------------------------------------


def test_transform_unit_output(plan768, rng):
    v = unit(rng.standard_normal(768))
    out = transform(v, plan768)
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)
    assert out.shape == (768,)


def test_transform_deterministic(plan768, rng):
    v = unit(rng.standard_normal(768))
    assert np.array_equal(transform(v, plan768), transform(v, plan768))


def test_transform_rejects_bad_shape(plan768):
    with pytest.raises(ValueError):
        transform(np.zeros((2, 768)), plan768)
    with pytest.raises(ValueError):
        transform(np.zeros(64), plan768)


def test_transform_cross_key_separation(rng):
    # same inputs under two keys: mean |cos| stays near the random-direction
    # baseline sqrt(2/(pi*768)) ~ 0.029, far below 0.05
    p1 = derive_plan(generate_key(seed=11), TransformConfig(dim=768))
    p2 = derive_plan(generate_key(seed=12), TransformConfig(dim=768))
    n = 1000
    vs = rng.standard_normal((n, 768))
    vs /= np.linalg.norm(vs, axis=1, keepdims=True)
    t1 = transform_batch(vs, p1)
    t2 = transform_batch(vs, p2)
    cos = np.abs(np.einsum("ij,ij->i", t1.astype(np.float64), t2.astype(np.float64)))
    assert float(cos.mean()) < 0.05


def test_transform_preserves_high_similarity(plan768, rng):
    # pairs at cos 0.9 going in should stay strongly similar under one key
    n = 100
    cosines = []
    for i in range(n):
        a = unit(rng.standard_normal(768))
        perp = rng.standard_normal(768)
        perp = unit(perp - (perp @ a) * a)
        b = 0.9 * a + np.sqrt(1 - 0.81) * perp
        ta, tb = transform(a, plan768), transform(b, plan768)
        cosines.append(float(ta @ tb))
    mean = float(np.mean(cosines))
    assert 0.75 <= mean <= 0.99
    assert np.mean([(0.75 <= c <= 0.99) for c in cosines]) >= 0.95


def test_transform_plan_digest_stability():
    cfg = TransformConfig(dim=64)
    assert derive_plan(KEY, cfg).digest() == derive_plan(KEY, cfg).digest()
    other = derive_plan(KEY, TransformConfig(dim=64, alpha=0.05))
    assert derive_plan(KEY, cfg).digest() != other.digest()


# -- batch -----------------------------------------------------------------


def test_batch_of_one_matches_single(plan768, rng):
    v = unit(rng.standard_normal(768))
    single = transform(v, plan768)
    batch = transform_batch(v[None, :], plan768)
    assert np.array_equal(batch[0], single)


def test_batch_parallel_equals_sequential(rng):
    plan = derive_plan(KEY, TransformConfig(dim=128))
    rows = rng.standard_normal((64, 128))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    seq = transform_batch(rows, plan, workers=1)
    par = transform_batch(rows, plan, workers=4)
    assert seq.tobytes() == par.tobytes()


def test_batch_rejects_bad_shape(plan768):
    with pytest.raises(ValueError):
        transform_batch(np.zeros(768), plan768)


def test_batch_timing_1000x768(plan768):
    rows = np.random.default_rng(9).standard_normal((1000, 768))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    t0 = time.perf_counter()
    out = transform_batch(rows, plan768)
    elapsed = time.perf_counter() - t0
    assert out.shape == (1000, 768) and out.dtype == np.float64
    assert elapsed < 10.0, f"batch took {elapsed:.1f}s"


# -- properties ------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**32 - 1),
    dim=st.integers(min_value=2, max_value=64),
    n_stages=st.integers(min_value=1, max_value=4),
)
def test_property_output_unit_and_deterministic(seed, dim, n_stages):
    plan = derive_plan(generate_key(seed=seed), TransformConfig(dim=dim, stages=n_stages))
    v = unit(np.random.default_rng(seed).standard_normal(dim))
    out = transform(v, plan)
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-10)
    assert np.array_equal(out, transform(v, plan))
