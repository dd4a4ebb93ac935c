import numpy as np
import pytest

from cafd import concepts


def exact_linear_data(seed=0, n=200, d=6, e=9):
    rng = np.random.default_rng(seed)
    latent = rng.standard_normal((n, d))
    a = rng.standard_normal((d, e))
    b = rng.standard_normal(e)
    return latent, latent @ a + b, a, b


def test_fit_recovers_exact_linear_map():
    latent, clip, a, b = exact_linear_data()
    aligner = concepts.fit_aligner(latent, clip, ridge_lambda=0.0)
    assert aligner.r2 >= 1 - 1e-9
    assert np.allclose(aligner.weights[:-1], a, atol=1e-8)
    assert np.allclose(aligner.weights[-1], b, atol=1e-8)


def test_normal_equation_residual_orthogonality():
    rng = np.random.default_rng(3)
    latent = rng.standard_normal((300, 8))
    clip = rng.standard_normal((300, 5))  # noisy target, imperfect fit
    aligner = concepts.fit_aligner(latent, clip, ridge_lambda=0.0)
    design = np.hstack([latent, np.ones((300, 1))])
    residual = clip - design @ aligner.weights
    assert np.abs(design.T @ residual).max() < 1e-6


def test_r2_near_zero_on_independent_noise():
    for seed in (0, 1, 2):
        rng = np.random.default_rng(seed)
        latent = rng.standard_normal((5000, 8))
        clip = rng.standard_normal((5000, 4))
        aligner = concepts.fit_aligner(latent, clip, ridge_lambda=0.0)
        assert abs(aligner.r2) < 0.05


def test_r2_at_least_zero_map():
    rng = np.random.default_rng(4)
    latent = rng.standard_normal((100, 5))
    clip = rng.standard_normal((100, 3))
    for lam in (0.0, 1e-3, 10.0):
        aligner = concepts.fit_aligner(latent, clip, ridge_lambda=lam)
        assert aligner.r2 >= -1e-12


def test_constant_output_dimension_convention():
    rng = np.random.default_rng(5)
    latent = rng.standard_normal((50, 3))
    clip = np.hstack([latent @ rng.standard_normal((3, 2)), np.full((50, 1), 2.0)])
    aligner = concepts.fit_aligner(latent, clip, ridge_lambda=0.0)
    # constant column contributes r2_dim = 0; the other two fit exactly
    assert aligner.r2 == pytest.approx(2.0 / 3.0, abs=1e-9)


def test_singular_system_suggests_ridge():
    rng = np.random.default_rng(6)
    col = rng.standard_normal((40, 1))
    latent = np.hstack([col, col])  # exactly collinear
    clip = rng.standard_normal((40, 2))
    with pytest.raises(ValueError, match="ridge_lambda"):
        concepts.fit_aligner(latent, clip, ridge_lambda=0.0)
    concepts.fit_aligner(latent, clip, ridge_lambda=1e-3)  # well-posed with ridge


def _identity_aligner(d):
    w = np.zeros((d + 1, d))
    w[:d, :d] = np.eye(d)
    return concepts.Aligner(weights=w, ridge_lambda=0.0, r2=1.0)


def test_extract_orthonormal_basis():
    aligner = _identity_aligner(4)
    basis = np.eye(4)
    assignment = concepts.extract_concepts(basis[2], aligner, basis, m=1)
    assert assignment.concept_ids.tolist() == [2]
    assert assignment.similarities[0] == pytest.approx(1.0, abs=1e-12)


def test_extract_tie_prefers_lower_concept_index():
    aligner = _identity_aligner(3)
    emb = np.array([[1.0, 0.0, 0.0], [0.6, 0.8, 0.0], [1.0, 0.0, 0.0]])
    assignment = concepts.extract_concepts(np.array([1.0, 0.0, 0.0]), aligner, emb, m=2)
    assert assignment.concept_ids.tolist() == [0, 2]


def test_extract_matches_full_sort_oracle():
    rng = np.random.default_rng(7)
    d, e, n_concepts = 6, 10, 64
    aligner = concepts.fit_aligner(*exact_linear_data(seed=8, n=100, d=d, e=e)[:2], ridge_lambda=0.0)
    emb = rng.standard_normal((n_concepts, e))
    latent = rng.standard_normal((30, d))
    ids, sims = concepts.extract_concepts_batch(latent, aligner, emb, m=10)
    aligned = aligner.map(latent)
    aligned /= np.linalg.norm(aligned, axis=1, keepdims=True)
    unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    for i in range(30):
        full = aligned[i] @ unit.T
        order = np.lexsort((np.arange(n_concepts), -full))[:10]
        assert np.array_equal(ids[i], order)
        assert np.allclose(sims[i], full[order], atol=1e-12)
    assert np.all(np.diff(sims, axis=1) <= 1e-12)


def test_extract_invariant_to_positive_rescaling():
    rng = np.random.default_rng(9)
    aligner = _identity_aligner(5)
    scaled = concepts.Aligner(weights=aligner.weights * 37.0, ridge_lambda=0.0, r2=1.0)
    emb = rng.standard_normal((20, 5))
    latent = rng.standard_normal((10, 5))
    base_ids, _ = concepts.extract_concepts_batch(latent, aligner, emb, m=6)
    scaled_ids, _ = concepts.extract_concepts_batch(latent, scaled, emb, m=6)
    assert np.array_equal(base_ids, scaled_ids)


def test_extract_zero_vector_is_degenerate():
    aligner = concepts.Aligner(weights=np.zeros((4, 3)), ridge_lambda=0.0, r2=0.0)
    with pytest.raises(concepts.DegenerateEmbedding):
        concepts.extract_concepts(np.ones(3), aligner, np.eye(3), m=1)


def test_extract_m_too_large():
    aligner = _identity_aligner(3)
    with pytest.raises(ValueError):
        concepts.extract_concepts(np.ones(3), aligner, np.eye(3), m=4)


# ------------------------------------------------------------- the set


def _table_from(ids, emb, m):
    names = [f"c{i}" for i in range(emb.shape[0])]
    return concepts.build_rcs(np.asarray(ids, dtype=np.int64), emb, names, m)


def test_rcs_is_set_union():
    emb = np.eye(5)
    table = _table_from([[0, 1], [1, 2]], emb, m=2)
    assert table.concept_ids.tolist() == [0, 1, 2]
    assert table.names == ("c0", "c1", "c2")


def test_rcs_single_shared_selection():
    emb = np.eye(6)
    table = _table_from([[4, 1, 3]] * 10, emb, m=3)
    assert len(table.concept_ids) == 3
    assert table.concept_ids.tolist() == [1, 3, 4]


def test_rcs_empty_input_rejected():
    with pytest.raises(ValueError):
        concepts.build_rcs(np.empty((0, 3), dtype=np.int64), np.eye(4), ["a", "b", "c", "d"], 3)


def test_rcs_matches_set_union_oracle():
    rng = np.random.default_rng(10)
    emb = rng.standard_normal((40, 6))
    ids = np.array([rng.choice(40, size=5, replace=False) for _ in range(1000)])
    table = _table_from(ids, emb, m=5)
    oracle = sorted(set(int(x) for x in ids.ravel()))
    assert table.concept_ids.tolist() == oracle


def test_cfr_trivial_ratios():
    emb = np.eye(4)
    ids = np.array([[0, 1], [0, 2], [0, 1], [0, 3]], dtype=np.int64)
    failed = np.array([False, True, False, False])
    table = concepts.compute_cfr(_table_from(ids, emb, 2), ids, failed)
    by_id = dict(zip(table.concept_ids.tolist(), table.cfr.tolist()))
    assert by_id[1] == 0.0  # only in correct inputs
    assert by_id[2] == 1.0  # only in the failing input
    assert by_id[0] == 0.25  # in 4 inputs, 1 failing


def test_cfr_matches_brute_force_counts():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        n, vocab, m = 150, 25, 4
        ids = np.array([rng.choice(vocab, size=m, replace=False) for _ in range(n)])
        failed = rng.random(n) < 0.3
        emb = rng.standard_normal((vocab, 5))
        table = concepts.compute_cfr(_table_from(ids, emb, m), ids, failed)
        for pos, cid in enumerate(table.concept_ids):
            total = sum(1 for row in ids if cid in row)
            faulty = sum(1 for row, f in zip(ids, failed) if f and cid in row)
            assert table.total_count[pos] == total
            assert table.faulty_count[pos] == faulty
            assert table.cfr[pos] == pytest.approx(faulty / total, abs=0)
        assert np.all(table.total_count >= 1)
        assert table.faulty_count.sum() <= failed.sum() * m


def test_cfr_row_count_mismatch():
    emb = np.eye(4)
    ids = np.array([[0, 1], [2, 3]], dtype=np.int64)
    with pytest.raises(ValueError):
        concepts.compute_cfr(_table_from(ids, emb, 2), ids, np.array([True]))


def test_concept_feature_lookup():
    emb = np.eye(4)
    ids = np.array([[0, 1], [0, 2], [0, 1], [0, 3]], dtype=np.int64)
    failed = np.array([False, True, False, False])
    table = concepts.compute_cfr(_table_from(ids, emb, 2), ids, failed)
    feats = concepts.concept_feature(np.array([2, 0, 1]), table)
    assert feats.tolist() == [1.0, 0.25, 0.0]
    zeros = concepts.concept_feature(np.array([1, 3]), table)
    assert zeros.tolist() == [0.0, 0.0]


def test_concept_feature_matches_dict_oracle():
    rng = np.random.default_rng(12)
    n, vocab, m = 80, 15, 3
    ids = np.array([rng.choice(vocab, size=m, replace=False) for _ in range(n)])
    failed = rng.random(n) < 0.4
    table = concepts.compute_cfr(_table_from(ids, rng.standard_normal((vocab, 4)), m), ids, failed)
    lookup = dict(zip(table.concept_ids.tolist(), table.cfr.tolist()))
    for row in ids[:20]:
        assert concepts.concept_feature(row, table).tolist() == [lookup[int(c)] for c in row]


def test_concept_feature_unknown_concept_rejected():
    emb = np.eye(4)
    ids = np.array([[0, 1]], dtype=np.int64)
    table = _table_from(ids, emb, 2)
    with pytest.raises(KeyError):
        concepts.concept_feature(np.array([3]), table)


def test_table_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    ids = np.array([rng.choice(10, size=3, replace=False) for _ in range(30)])
    failed = rng.random(30) < 0.5
    table = concepts.compute_cfr(_table_from(ids, rng.standard_normal((10, 6)), 3), ids, failed)
    concepts.write_table(table, tmp_path / "emb.bin", tmp_path / "table.csv")
    back = concepts.read_table(tmp_path / "emb.bin", tmp_path / "table.csv", m=3)
    assert np.array_equal(back.concept_ids, table.concept_ids)
    assert np.array_equal(back.total_count, table.total_count)
    assert np.array_equal(back.faulty_count, table.faulty_count)
    assert np.allclose(back.cfr, table.cfr, atol=0)
    assert np.allclose(back.text_emb, table.text_emb, atol=1e-6)
    assert back.names == table.names
