"""Adapter fitting: pooling, Procrustes exactness and optimality, packaging."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pivotnmt.adapter import (
    AdapterError,
    AdapterMatrix,
    PooledPairs,
    collect_pairs,
    fit_adapter,
    make_baseline_adapter,
    pool_sentence,
)
from pivotnmt.data import ParallelCorpus
from tests.test_model import tiny_model


def random_orthogonal_givens(d: int, seed: int, sweeps: int = 3) -> np.ndarray:
    """Orthogonal matrix from seeded Givens rotations (independent of SVD)."""
    rng = np.random.default_rng(seed)
    r = np.eye(d)
    for _ in range(sweeps * d):
        i, j = rng.choice(d, size=2, replace=False)
        theta = rng.uniform(0, 2 * np.pi)
        g = np.eye(d)
        g[i, i] = g[j, j] = np.cos(theta)
        g[i, j] = -np.sin(theta)
        g[j, i] = np.sin(theta)
        r = g @ r
    return r


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def test_average_pool():
    np.testing.assert_allclose(
        pool_sentence(np.array([[1.0, 2.0], [3.0, 4.0]]), "average"), [2.0, 3.0]
    )


def test_max_pool():
    np.testing.assert_allclose(
        pool_sentence(np.array([[1.0, 4.0], [3.0, 2.0]]), "max"), [3.0, 4.0]
    )


def test_single_position_pool_both_modes():
    row = np.array([[5.0, -1.0]])
    np.testing.assert_allclose(pool_sentence(row, "average"), row[0])
    np.testing.assert_allclose(pool_sentence(row, "max"), row[0])


def test_pool_excludes_padding_and_rejects_all_pad():
    states = np.array([[1.0, 1.0], [9.0, 9.0]])
    np.testing.assert_allclose(
        pool_sentence(states, "average", pad_mask=np.array([False, True])), [1.0, 1.0]
    )
    with pytest.raises(AdapterError):
        pool_sentence(states, "average", pad_mask=np.array([True, True]))


# ---------------------------------------------------------------------------
# Procrustes fit
# ---------------------------------------------------------------------------

def test_identity_recovery_when_sides_equal():
    rng = np.random.default_rng(0)
    s = rng.standard_normal((16, 200))
    m = fit_adapter(PooledPairs(s=s, p=s.copy(), pooling="average"))
    assert np.abs(m.m - np.eye(16)).max() <= 1e-8
    assert m.orthogonality_error <= 1e-8
    assert m.provenance == "procrustes"


def test_exact_recovery_of_orthogonal_map():
    d, n = 64, 500
    rng = np.random.default_rng(1)
    s = rng.standard_normal((d, n))
    r = random_orthogonal_givens(d, seed=42)
    m = fit_adapter(PooledPairs(s=s, p=r @ s, pooling="average"))
    assert np.linalg.norm(m.m - r) <= 1e-6
    assert m.orthogonality_error <= 1e-8
    assert m.fit_residual <= 1e-6 * np.linalg.norm(s)


def test_monte_carlo_optimality():
    d, n = 12, 60
    rng = np.random.default_rng(2)
    s = rng.standard_normal((d, n))
    p = rng.standard_normal((d, n))
    m = fit_adapter(PooledPairs(s=s, p=p, pooling="max"))
    best = np.linalg.norm(m.m @ s - p)
    for k in range(1000):
        q = random_orthogonal_givens(d, seed=1000 + k, sweeps=2)
        assert best <= np.linalg.norm(q @ s - p) + 1e-9


def test_scale_invariance():
    rng = np.random.default_rng(3)
    s = rng.standard_normal((8, 40))
    p = rng.standard_normal((8, 40))
    m1 = fit_adapter(PooledPairs(s=s, p=p, pooling="average"))
    m2 = fit_adapter(PooledPairs(s=2.5 * s, p=2.5 * p, pooling="average"))
    np.testing.assert_allclose(m1.m, m2.m, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_column_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    s = rng.standard_normal((6, 30))
    p = rng.standard_normal((6, 30))
    perm = rng.permutation(30)
    m1 = fit_adapter(PooledPairs(s=s, p=p, pooling="average"))
    m2 = fit_adapter(PooledPairs(s=s[:, perm], p=p[:, perm], pooling="average"))
    np.testing.assert_allclose(m1.m, m2.m, atol=1e-9)


def test_non_finite_pooled_values_rejected():
    s = np.ones((4, 5))
    p = np.ones((4, 5))
    p[2, 2] = np.inf
    with pytest.raises(AdapterError):
        fit_adapter(PooledPairs(s=s, p=p, pooling="average"))


# ---------------------------------------------------------------------------
# baselines and file format
# ---------------------------------------------------------------------------

def test_identity_baseline_exact():
    a = make_baseline_adapter("identity", 6)
    assert np.array_equal(a.m, np.eye(6))
    assert a.provenance == "identity"


def test_random_baseline_seeded_and_non_orthogonal():
    a = make_baseline_adapter("random", 16, seed=5)
    b = make_baseline_adapter("random", 16, seed=5)
    c = make_baseline_adapter("random", 16, seed=6)
    assert np.array_equal(a.m, b.m)
    assert not np.array_equal(a.m, c.m)
    assert a.orthogonality_error > 1e-4


def test_adapter_file_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    s = rng.standard_normal((8, 30))
    m = fit_adapter(PooledPairs(s=s, p=rng.standard_normal((8, 30)), pooling="max"))
    p1 = tmp_path / "a.adapter"
    m.save(p1)
    loaded = AdapterMatrix.load(p1)
    assert np.array_equal(loaded.m, m.m)
    assert loaded.pooling == "max" and loaded.provenance == "procrustes"
    assert loaded.orthogonality_error == m.orthogonality_error
    assert loaded.fit_residual == m.fit_residual
    loaded.save(tmp_path / "b.adapter")
    assert (tmp_path / "a.adapter").read_bytes() == (tmp_path / "b.adapter").read_bytes()


# ---------------------------------------------------------------------------
# pair collection through encoders
# ---------------------------------------------------------------------------

def toy_src_piv_corpus(model, n=10):
    sv = model.src_vocab
    words = [t for t in sv.tokens[sv.n_special :]]
    rng = np.random.default_rng(0)
    pairs = []
    for _ in range(n):
        ln = int(rng.integers(1, 5))
        s = [words[int(rng.integers(len(words)))] for _ in range(ln)]
        pairs.append((s, list(reversed(s))))
    return ParallelCorpus(pairs=pairs, src_lang="src", tgt_lang="piv")


def test_collect_pairs_shapes_and_duplicates():
    model = tiny_model(dtype="float32")
    corpus = toy_src_piv_corpus(model, n=8)
    corpus.pairs.append(corpus.pairs[0])
    pooled = collect_pairs(corpus, model, model, mode="average")
    assert pooled.s.shape == (8, 9) and pooled.p.shape == (8, 9)
    np.testing.assert_allclose(pooled.s[:, 0], pooled.s[:, 8], atol=1e-7)


def test_collect_pairs_seeded_subset_deterministic():
    model = tiny_model(dtype="float32")
    corpus = toy_src_piv_corpus(model, n=12)
    a = collect_pairs(corpus, model, model, mode="average", max_pairs=5, seed=3)
    b = collect_pairs(corpus, model, model, mode="average", max_pairs=5, seed=3)
    np.testing.assert_array_equal(a.s, b.s)
    assert a.n == 5


def test_collect_pairs_dim_mismatch():
    a = tiny_model(dtype="float32")
    big = tiny_model(dtype="float32")
    big.config.model_dim = 16
    with pytest.raises(AdapterError):
        collect_pairs(toy_src_piv_corpus(a), a, big)
