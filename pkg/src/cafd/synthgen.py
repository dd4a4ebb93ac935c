"""Seeded synthetic benchmark bundles with planted failure-correlated
concepts, for desk-scale end-to-end validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import FaultClustering, write_clusters_csv
from .tensorio import write_bundle

_CENTER_SCALE = 2.0
_MAP_OFFSET_SCALE = 0.1
_PLANTED_REACH = 3.5  # planted anchors sit this far out along their cone
_MAX_FLIP = 0.99


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_train: int = 2000
    n_test: int = 1000
    num_classes: int = 10
    latent_dim: int = 16
    clip_dim: int = 32
    n_concepts: int = 64
    n_planted: int = 8
    m: int = 10
    base_error_rate: float = 0.02
    planted_error_boost: float = 0.25
    cluster_spread: float = 1.0

    def validate(self) -> None:
        if min(self.n_train, self.n_test, self.latent_dim, self.clip_dim, self.n_concepts, self.m) < 1:
            raise ValueError("all counts must be >= 1")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if not 0 <= self.n_planted <= self.n_concepts:
            raise ValueError(f"n_planted {self.n_planted} outside [0, {self.n_concepts}]")
        if self.m > self.n_concepts:
            raise ValueError(f"m {self.m} exceeds n_concepts {self.n_concepts}")
        if not (0 <= self.base_error_rate < 1 and 0 <= self.planted_error_boost < 1):
            raise ValueError("error rates must lie in [0, 1)")
        if self.cluster_spread <= 0:
            raise ValueError("cluster_spread must be > 0")

    @classmethod
    def from_json(cls, path: str | Path) -> "SynthConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def to_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _softmax32(logits32: np.ndarray) -> np.ndarray:
    z = logits32.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=1, keepdims=True)).astype(np.float32)


def _top_m_ids(clip_emb: np.ndarray, concept_unit: np.ndarray, m: int) -> np.ndarray:
    norms = np.linalg.norm(clip_emb, axis=1, keepdims=True)
    sims = (clip_emb / np.where(norms > 0, norms, 1.0)) @ concept_unit.T
    return np.argsort(-sims, axis=1, kind="stable")[:, :m].astype(np.int64)


@dataclass(frozen=True)
class GeneratedBundle:
    tensors: dict[str, np.ndarray]
    concept_names: list[str]
    clustering: FaultClustering
    planted_concept_ids: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))


def generate(config: SynthConfig) -> GeneratedBundle:
    """Deterministically generate a valid bundle plus ground-truth clusters.

    Draw order (one stream, fixed draw counts regardless of outcomes):
    class centers, shared linear map, map offset, concept anchor classes,
    concept anchor noise, planted concept choice, planted cone directions,
    then per split (train first): class ids, latent noise; then per split:
    flip uniforms, flip targets.

    The simulated model's true labels start equal to its predictions; label
    flips (more likely for inputs whose top-m concepts include a planted
    concept) move them away, so every failure is a planted one. Failing
    test inputs are clustered by their most similar planted concept, or per
    predicted class when no planted concept was extracted.
    """
    config.validate()
    c, d, e = config.num_classes, config.latent_dim, config.clip_dim
    rng = np.random.default_rng(config.seed)

    centers = rng.standard_normal((c, d)) * _CENTER_SCALE
    map_a = rng.standard_normal((d, e)) / np.sqrt(d)
    map_b = rng.standard_normal(e) * _MAP_OFFSET_SCALE

    # Every concept is the shared-space image of a latent anchor. Non-planted
    # anchors sit at typical within-class positions, so they out-compete the
    # planted ones in most inputs' top-m. Planted anchors point along
    # directions orthogonal to the class-center span (falling back to raw
    # random directions when d <= C), scaled outward, so each resonates only
    # with the minority of inputs whose within-class deviation leans that way.
    anchor_classes = rng.integers(0, c, config.n_concepts)
    anchor_noise = rng.standard_normal((config.n_concepts, d))
    planted_ids = np.sort(rng.choice(config.n_concepts, size=config.n_planted, replace=False))
    cone_raw = rng.standard_normal((config.n_planted, d))

    anchors = centers[anchor_classes] + config.cluster_spread * anchor_noise
    if d > c:
        q, _ = np.linalg.qr(centers.T)
        cone_raw = cone_raw - (cone_raw @ q) @ q.T
    norms = np.linalg.norm(cone_raw, axis=1, keepdims=True)
    cones = cone_raw / np.where(norms > 0, norms, 1.0)
    anchors[planted_ids] = _PLANTED_REACH * config.cluster_spread * cones

    concept_unit = anchors @ map_a + map_b
    norms = np.linalg.norm(concept_unit, axis=1, keepdims=True)
    concept_unit = concept_unit / np.where(norms > 0, norms, 1.0)

    splits: dict[str, dict[str, np.ndarray]] = {}
    draws = {}
    for split, n in (("train", config.n_train), ("test", config.n_test)):
        draws[split] = (rng.integers(0, c, n), rng.standard_normal((n, d)))
    flip_draws = {}
    for split, n in (("train", config.n_train), ("test", config.n_test)):
        flip_draws[split] = (rng.random(n), rng.integers(0, c - 1, n))

    for split, n in (("train", config.n_train), ("test", config.n_test)):
        cls, noise = draws[split]
        latent64 = centers[cls] + config.cluster_spread * noise
        clip64 = latent64 @ map_a + map_b
        # nearest-center linear classifier, scaled to keep softmax informative
        logits64 = (latent64 @ centers.T - 0.5 * np.einsum("ij,ij->i", centers, centers)) / np.sqrt(d)
        logits32 = logits64.astype(np.float32)
        pred = np.argmax(logits32, axis=1).astype(np.int64)
        probs32 = _softmax32(logits32)

        assign = _top_m_ids(clip64, concept_unit, config.m)
        has_planted = np.isin(assign, planted_ids).any(axis=1)

        uniforms, targets = flip_draws[split]
        flip_prob = np.where(
            has_planted,
            min(config.base_error_rate + config.planted_error_boost, _MAX_FLIP),
            config.base_error_rate,
        )
        flip = uniforms < flip_prob
        labels = pred.copy()
        labels[flip] = targets[flip] + (targets[flip] >= pred[flip])

        splits[split] = {
            "latent": latent64.astype(np.float32),
            "clip": clip64.astype(np.float32),
            "logits": logits32,
            "probs": probs32,
            "pred": pred,
            "labels": labels,
            "assign": assign,
            "clip64": clip64,
        }

    test = splits["test"]
    failing = np.flatnonzero(test["labels"] != test["pred"])
    norms = np.linalg.norm(test["clip64"], axis=1, keepdims=True)
    planted_sims = (test["clip64"] / np.where(norms > 0, norms, 1.0)) @ concept_unit[planted_ids].T
    cluster_of = {}
    for i in failing:
        if config.n_planted and np.isin(test["assign"][i], planted_ids).any():
            cluster_of[int(i)] = int(np.argmax(planted_sims[i]))
        else:
            cluster_of[int(i)] = config.n_planted + int(test["pred"][i])
    clustering = FaultClustering(cluster_of=cluster_of)

    tensors = {
        "logits_train": splits["train"]["logits"],
        "logits_test": test["logits"],
        "probs_train": splits["train"]["probs"],
        "probs_test": test["probs"],
        "latent_train": splits["train"]["latent"],
        "latent_test": test["latent"],
        "labels_train": splits["train"]["labels"],
        "labels_test": test["labels"],
        "pred_train": splits["train"]["pred"],
        "pred_test": test["pred"],
        "clip_img_train": splits["train"]["clip"],
        "concept_text": concept_unit.astype(np.float32),
    }
    names = [f"concept_{i:04d}" for i in range(config.n_concepts)]
    return GeneratedBundle(
        tensors=tensors,
        concept_names=names,
        clustering=clustering,
        planted_concept_ids=planted_ids,
    )


def write_synth(config: SynthConfig, out_dir: str | Path) -> tuple[Path, Path]:
    """Generate and persist a bundle; returns (manifest path, clusters path)."""
    generated = generate(config)
    out_dir = Path(out_dir)
    manifest = write_bundle(
        out_dir,
        generated.tensors,
        generated.concept_names,
        n_train=config.n_train,
        n_test=config.n_test,
        num_classes=config.num_classes,
        latent_dim=config.latent_dim,
        clip_dim=config.clip_dim,
    )
    clusters = out_dir / "clusters.csv"
    write_clusters_csv(generated.clustering, clusters)
    return manifest, clusters
