import numpy as np
import pytest

from cafd import concepts, evaluation, synthgen
from cafd.ranking import rank_scores
from cafd.tensorio import load_bundle

SMALL = dict(n_train=300, n_test=150, num_classes=5, latent_dim=8, clip_dim=12, n_concepts=24, n_planted=4, m=5)


def test_same_seed_is_bit_identical(tmp_path):
    cfg = synthgen.SynthConfig(seed=17, **SMALL)
    m1, c1 = synthgen.write_synth(cfg, tmp_path / "a")
    m2, c2 = synthgen.write_synth(cfg, tmp_path / "b")
    for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_different_seed_differs(tmp_path):
    ga = synthgen.generate(synthgen.SynthConfig(seed=1, **SMALL))
    gb = synthgen.generate(synthgen.SynthConfig(seed=2, **SMALL))
    assert not np.array_equal(ga.tensors["latent_train"], gb.tensors["latent_train"])


def test_zero_rates_mean_zero_failures():
    cfg = synthgen.SynthConfig(seed=5, base_error_rate=0.0, planted_error_boost=0.0, **SMALL)
    g = synthgen.generate(cfg)
    assert np.array_equal(g.tensors["labels_train"], g.tensors["pred_train"])
    assert np.array_equal(g.tensors["labels_test"], g.tensors["pred_test"])
    assert g.clustering.cluster_of == {}
    # the zero-fault branch of the rate metric is reachable and returns 0
    ranked = rank_scores(np.zeros(cfg.n_test))
    assert evaluation.fdr(ranked, g.clustering, 0.1, cfg.n_test).fdr == 0.0


def test_probs_are_softmax_of_logits():
    g = synthgen.generate(synthgen.SynthConfig(seed=7, **SMALL))
    for split in ("train", "test"):
        logits = g.tensors[f"logits_{split}"].astype(np.float64)
        z = logits - logits.max(axis=1, keepdims=True)
        expected = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        assert np.abs(g.tensors[f"probs_{split}"] - expected).max() < 1e-6


def test_bundle_passes_validation(tmp_path):
    manifest, _ = synthgen.write_synth(synthgen.SynthConfig(seed=11, **SMALL), tmp_path)
    bundle = load_bundle(manifest)
    assert bundle.n_train == SMALL["n_train"]


def test_clustering_covers_exactly_failing_test_inputs():
    g = synthgen.generate(synthgen.SynthConfig(seed=13, **SMALL))
    failing = set(np.flatnonzero(g.tensors["labels_test"] != g.tensors["pred_test"]).tolist())
    assert set(g.clustering.cluster_of) == failing
    assert all(c >= 0 for c in g.clustering.cluster_of.values())


def test_planted_concepts_have_higher_mean_cfr(tmp_path):
    gaps = []
    for seed in range(20):
        cfg = synthgen.SynthConfig(seed=seed, **SMALL)
        g = synthgen.generate(cfg)
        manifest, _ = synthgen.write_synth(cfg, tmp_path / str(seed))
        bundle = load_bundle(manifest)
        aligner = concepts.fit_aligner(bundle.latent_train, bundle.clip_img_train, ridge_lambda=0.0)
        assign, _ = concepts.extract_concepts_batch(bundle.latent_train, aligner, bundle.concept_text, cfg.m)
        failed = np.asarray(bundle.pred_train) != np.asarray(bundle.labels_train)
        table = concepts.compute_cfr(
            concepts.build_rcs(assign, bundle.concept_text, bundle.concept_names, cfg.m), assign, failed
        )
        planted = np.isin(table.concept_ids, g.planted_concept_ids)
        if planted.any() and (~planted).any():
            gaps.append(table.cfr[planted].mean() - table.cfr[~planted].mean())
    assert len(gaps) >= 15
    assert np.mean(gaps) > 0


def test_failure_rate_monotone_in_boost():
    from scipy.stats import spearmanr

    boosts = [0.0, 0.1, 0.2, 0.3, 0.4]
    correlations = []
    for seed in range(6):
        rates = []
        for boost in boosts:
            cfg = synthgen.SynthConfig(seed=seed, base_error_rate=0.02, planted_error_boost=boost, **SMALL)
            g = synthgen.generate(cfg)
            fails = (g.tensors["labels_train"] != g.tensors["pred_train"]).mean()
            rates.append(fails)
        rho = spearmanr(boosts, rates).statistic
        correlations.append(rho)
    assert np.mean(correlations) > 0


def test_config_validation():
    with pytest.raises(ValueError):
        synthgen.SynthConfig(n_planted=100, n_concepts=10).validate()
    with pytest.raises(ValueError):
        synthgen.SynthConfig(m=20, n_concepts=10).validate()
    with pytest.raises(ValueError):
        synthgen.SynthConfig(base_error_rate=1.5).validate()
    with pytest.raises(ValueError):
        synthgen.SynthConfig(num_classes=1).validate()
    with pytest.raises(ValueError):
        synthgen.SynthConfig(cluster_spread=0.0).validate()
    synthgen.SynthConfig().validate()


def test_config_json_round_trip(tmp_path):
    cfg = synthgen.SynthConfig(seed=3, n_train=50, n_test=20, planted_error_boost=0.4)
    cfg.to_json(tmp_path / "cfg.json")
    assert synthgen.SynthConfig.from_json(tmp_path / "cfg.json") == cfg
