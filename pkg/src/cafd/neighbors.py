"""Exact k-nearest-neighbor search over training latents, neighbor-weighted
per-class support, and the support-ratio baseline score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ranking import RankedList, rank_scores
from .tensorio import DatasetBundle

DEFAULT_K = 10
DEFAULT_TAU = 1.0
DEFAULT_EPSILON = 1e-12

_BLOCK_ROWS = 256


@dataclass(frozen=True)
class NeighborSet:
    """K training neighbors of one query, nearest first."""

    query_id: int
    neighbor_ids: np.ndarray  # int64 [K], distinct
    sq_dists: np.ndarray  # float64 [K], non-decreasing


@dataclass(frozen=True)
class SupportVector:
    """Distance-weighted per-class support over the K nearest neighbors."""

    query_id: int
    support: np.ndarray  # float64 [C], sums to 1
    tau: float
    k: int


def _exact_row(train: np.ndarray, query: np.ndarray, candidates: np.ndarray, k: int):
    """Exact float64 distances for candidate rows; returns top-k with tie rule."""
    diffs = train[candidates] - query
    d2 = np.einsum("ij,ij->i", diffs, diffs)
    order = np.lexsort((candidates, d2))[:k]
    return candidates[order], d2[order]


def knn_batch(
    queries: np.ndarray,
    train_latent: np.ndarray,
    k: int,
    exclude_self: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive k-NN under squared Euclidean distance for many queries.

    Candidate neighbors are shortlisted per block with a Gram-matrix pass,
    then re-scored with exact float64 differences so the result matches
    direct per-pair summation bit-for-bit, including the tie rule (equal
    distance -> lower training index first).

    With ``exclude_self=True``, query row i is assumed to be training row i
    and is removed from its own candidate set (leave-one-out queries).

    Returns (neighbor_ids [n, k] int64, sq_dists [n, k] float64).
    """
    q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64))
    t = np.ascontiguousarray(np.asarray(train_latent, dtype=np.float64))
    if q.ndim != 2 or t.ndim != 2 or q.shape[1] != t.shape[1]:
        raise ValueError(f"dimension mismatch: queries {q.shape}, train {t.shape}")
    n_train = t.shape[0]
    limit = n_train - 1 if exclude_self else n_train
    if not 1 <= k <= limit:
        raise ValueError(f"k={k} outside [1, {limit}]")

    t_norms = np.einsum("ij,ij->i", t, t)
    scale = float(t_norms.max(initial=0.0)) + 1.0
    out_ids = np.empty((q.shape[0], k), dtype=np.int64)
    out_d2 = np.empty((q.shape[0], k), dtype=np.float64)

    for start in range(0, q.shape[0], _BLOCK_ROWS):
        stop = min(start + _BLOCK_ROWS, q.shape[0])
        block = q[start:stop]
        q_norms = np.einsum("ij,ij->i", block, block)
        approx = q_norms[:, None] + t_norms[None, :] - 2.0 * (block @ t.T)
        np.maximum(approx, 0.0, out=approx)
        if exclude_self:
            rows = np.arange(start, stop)
            approx[rows - start, rows] = np.inf
        kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
        # Margin covers the Gram-trick rounding error before exact re-scoring.
        tol = 1e-9 * (q_norms + scale)
        for i in range(stop - start):
            cand = np.flatnonzero(approx[i] <= kth[i] + tol[i])
            ids, d2 = _exact_row(t, block[i], cand, k)
            out_ids[start + i] = ids
            out_d2[start + i] = d2
    return out_ids, out_d2


def knn(query: np.ndarray, train_latent: np.ndarray, k: int) -> NeighborSet:
    """Exact k nearest training rows for a single query vector."""
    ids, d2 = knn_batch(np.asarray(query, dtype=np.float64)[None, :], train_latent, k)
    return NeighborSet(query_id=0, neighbor_ids=ids[0], sq_dists=d2[0])


def _support_from_neighbors(
    neighbor_labels: np.ndarray,
    sq_dists: np.ndarray,
    num_classes: int,
    tau: float,
) -> np.ndarray:
    """Per-class exponential-distance support; rows sum to 1.

    The exponent is shifted by the row minimum before exponentiation; the
    shift cancels in the ratio and prevents underflow at large distances.
    """
    shifted = sq_dists - sq_dists.min(axis=-1, keepdims=True)
    w = np.exp(-shifted / tau)
    totals = w.sum(axis=-1)
    if neighbor_labels.ndim == 1:
        return np.bincount(neighbor_labels, weights=w, minlength=num_classes) / totals
    out = np.empty((neighbor_labels.shape[0], num_classes), dtype=np.float64)
    for i in range(neighbor_labels.shape[0]):
        out[i] = np.bincount(neighbor_labels[i], weights=w[i], minlength=num_classes)
    out /= totals[:, None]
    return out


def ned_support(
    query: np.ndarray,
    pred: int,
    bundle: DatasetBundle,
    k: int = DEFAULT_K,
    tau: float = DEFAULT_TAU,
) -> SupportVector:
    """Neighbor-weighted support for every class at one query point.

    ``support[c] = sum_i exp(-||z - z_i||^2 / tau) * [y_i = c] / sum_i exp(...)``
    over the k nearest training rows; ``support[pred]`` is the support of
    the model's predicted class.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    if not 0 <= pred < bundle.num_classes:
        raise ValueError(f"pred {pred} outside [0, {bundle.num_classes})")
    ids, d2 = knn_batch(np.asarray(query, dtype=np.float64)[None, :], bundle.latent_train, k)
    labels = np.asarray(bundle.labels_train)[ids[0]]
    support = _support_from_neighbors(labels, d2[0], bundle.num_classes, tau)
    return SupportVector(query_id=0, support=support, tau=tau, k=k)


def ned_support_batch(
    queries: np.ndarray,
    train_latent: np.ndarray,
    train_labels: np.ndarray,
    num_classes: int,
    k: int = DEFAULT_K,
    tau: float = DEFAULT_TAU,
    exclude_self: bool = False,
) -> np.ndarray:
    """Support matrix [n, C] for many queries; see :func:`ned_support`."""
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    ids, d2 = knn_batch(queries, train_latent, k, exclude_self=exclude_self)
    labels = np.asarray(train_labels)[ids]
    return _support_from_neighbors(labels, d2, num_classes, tau)


def datis_score(support: SupportVector | np.ndarray, pred: int, epsilon: float = DEFAULT_EPSILON) -> float:
    """Best rival-class support over predicted-class support.

    Higher = the training neighborhood only weakly supports the prediction,
    so the baseline ranker sorts descending.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    vec = support.support if isinstance(support, SupportVector) else np.asarray(support, dtype=np.float64)
    rival = np.delete(vec, pred).max(initial=0.0)
    return float(rival / (vec[pred] + epsilon))


def datis_scores(supports: np.ndarray, preds: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Vectorized :func:`datis_score` over a support matrix."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    sup = np.asarray(supports, dtype=np.float64)
    rows = np.arange(sup.shape[0])
    own = sup[rows, preds]
    masked = sup.copy()
    masked[rows, preds] = -np.inf
    rival = masked.max(axis=1)
    rival = np.where(np.isfinite(rival), rival, 0.0)  # C == 1 corner
    return rival / (own + epsilon)


def rank_by_datis(
    bundle: DatasetBundle,
    k: int = DEFAULT_K,
    tau: float = DEFAULT_TAU,
    epsilon: float = DEFAULT_EPSILON,
) -> RankedList:
    """Rank the test split by the support-ratio score, weakest support first."""
    supports = ned_support_batch(
        bundle.latent_test, bundle.latent_train, bundle.labels_train, bundle.num_classes, k=k, tau=tau
    )
    scores = datis_scores(supports, np.asarray(bundle.pred_test), epsilon)
    return rank_scores(scores, descending=True)
