"""End-to-end glue: fit the fault detector from a bundle, score its test
split. Shared by the command-line stages and the end-to-end tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import concepts, features, lrmodel, neighbors
from .ranking import RankedList, rank_scores
from .tensorio import DatasetBundle


@dataclass(frozen=True)
class TrainedPipeline:
    aligner: concepts.Aligner
    table: concepts.ConceptTable
    model: lrmodel.LRModel | None  # None while only feature stages have run
    mean: np.ndarray
    std: np.ndarray
    knn_k: int
    ned_tau: float


def train_failures(bundle: DatasetBundle) -> np.ndarray:
    """Misprediction flags of the model-under-test on its training split."""
    return np.asarray(bundle.pred_train) != np.asarray(bundle.labels_train)


def fit_pipeline(
    bundle: DatasetBundle,
    m: int = concepts.DEFAULT_M,
    ridge_lambda: float = concepts.DEFAULT_RIDGE,
    knn_k: int = neighbors.DEFAULT_K,
    ned_tau: float = neighbors.DEFAULT_TAU,
    lambda_l2: float = lrmodel.DEFAULT_L2,
    tol: float = lrmodel.DEFAULT_TOL,
    max_iters: int = lrmodel.DEFAULT_MAX_ITERS,
    class_weight: str = "balanced",
) -> TrainedPipeline:
    """Fit aligner, concept table, feature statistics, and the detector.

    Training rows are their own nearest neighbors, so their support vectors
    are computed leave-one-out; otherwise the support feature would encode
    each row's own failure flag.
    """
    if bundle.clip_img_train is None:
        raise ValueError("bundle lacks clip_img_train; cannot fit the aligner")
    aligner = concepts.fit_aligner(bundle.latent_train, bundle.clip_img_train, ridge_lambda)

    assign_ids, _ = concepts.extract_concepts_batch(bundle.latent_train, aligner, bundle.concept_text, m)
    failed = train_failures(bundle)
    table = concepts.compute_cfr(
        concepts.build_rcs(assign_ids, bundle.concept_text, bundle.concept_names, m),
        assign_ids,
        failed,
    )

    supports = neighbors.ned_support_batch(
        bundle.latent_train,
        bundle.latent_train,
        bundle.labels_train,
        bundle.num_classes,
        k=knn_k,
        tau=ned_tau,
        exclude_self=True,
    )
    cfr_vecs = concepts.concept_feature(assign_ids, table)
    fm = features.standardize_fit(features.assemble(bundle, "train", supports, cfr_vecs))
    model = lrmodel.train(
        fm, failed, lambda_l2=lambda_l2, tol=tol, max_iters=max_iters, class_weight=class_weight
    )
    return TrainedPipeline(
        aligner=aligner,
        table=table,
        model=model,
        mean=fm.mean,
        std=fm.std,
        knn_k=knn_k,
        ned_tau=ned_tau,
    )


def test_feature_matrix(bundle: DatasetBundle, pipe: TrainedPipeline) -> features.FeatureMatrix:
    """Standardized feature rows for the test split.

    Test-time concept extraction is restricted to the representative set;
    the returned positions index table rows directly.
    """
    supports = neighbors.ned_support_batch(
        bundle.latent_test,
        bundle.latent_train,
        bundle.labels_train,
        bundle.num_classes,
        k=pipe.knn_k,
        tau=pipe.ned_tau,
    )
    positions, _ = concepts.extract_concepts_batch(
        bundle.latent_test, pipe.aligner, pipe.table.text_emb, pipe.table.m
    )
    cfr_vecs = pipe.table.cfr[positions]
    raw = features.assemble(bundle, "test", supports, cfr_vecs)
    return features.standardize_apply(raw, pipe.mean, pipe.std)


def score_test(bundle: DatasetBundle, pipe: TrainedPipeline) -> tuple[np.ndarray, RankedList]:
    """Fault probabilities for the test split and the resulting ranking."""
    if pipe.model is None:
        raise ValueError("pipeline has no trained model")
    fm = test_feature_matrix(bundle, pipe)
    proba = lrmodel.predict_proba(pipe.model, fm)
    return proba, rank_scores(proba, descending=True)
