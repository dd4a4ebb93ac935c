"""Probability-based uncertainty metrics and the rankers built on them."""

from __future__ import annotations

import numpy as np

from .ranking import RankedList, rank_scores
from .tensorio import DatasetBundle


def deepgini(probs: np.ndarray) -> np.ndarray | float:
    """Gini impurity of the softmax row(s): 1 - sum(p_i^2).

    Accepts one distribution or a batch; higher means more uncertain,
    bounded by [0, 1 - 1/C] with the maximum at the uniform distribution.
    """
    p = np.asarray(probs, dtype=np.float64)
    out = 1.0 - np.sum(p * p, axis=-1)
    return out if p.ndim > 1 else float(out)


def vanilla(probs: np.ndarray) -> np.ndarray | float:
    """One minus the maximum predicted probability."""
    p = np.asarray(probs, dtype=np.float64)
    out = 1.0 - np.max(p, axis=-1)
    return out if p.ndim > 1 else float(out)


def margin(probs: np.ndarray) -> np.ndarray | float:
    """Gap between the two largest probabilities.

    Small margin = high uncertainty, so the margin ranker sorts ascending
    while the other metric rankers sort descending.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.shape[-1] < 2:
        raise ValueError("margin requires at least two classes")
    top2 = np.partition(p, -2, axis=-1)[..., -2:]
    out = top2[..., 1] - top2[..., 0]
    return out if p.ndim > 1 else float(out)


# metric name -> (scoring function, ranker sorts descending)
METRICS = {
    "deepgini": (deepgini, True),
    "vanilla": (vanilla, True),
    "margin": (margin, False),
}


def rank_by_metric(bundle: DatasetBundle, metric: str) -> RankedList:
    """Rank the test split by a probability metric, most uncertain first."""
    try:
        fn, descending = METRICS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; expected one of {sorted(METRICS)}") from None
    scores = np.atleast_1d(fn(bundle.probs_test))
    return rank_scores(scores, descending=descending)
