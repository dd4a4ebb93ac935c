"""Assembly and standardization of the fault-detector feature matrix."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import uncertainty
from .tensorio import DatasetBundle, read_tensor, write_tensor

STD_FLOOR = 1e-12


@dataclass(frozen=True)
class FeatureMatrix:
    """Feature rows plus the training statistics used to standardize them.

    Column layout: [probs | logits | onehot(pred) | deepgini | ned_pred |
    cfr_1..cfr_m], F = 3*C + 2 + m.
    """

    X: np.ndarray  # float64 [n, F]
    column_map: dict[str, tuple[int, int]]
    num_classes: int
    m: int
    standardized: bool = False
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    @property
    def n_features(self) -> int:
        return self.X.shape[1]


def layout(num_classes: int, m: int) -> dict[str, tuple[int, int]]:
    """Half-open column ranges for each feature group."""
    c = num_classes
    return {
        "probs": (0, c),
        "logits": (c, 2 * c),
        "pred_onehot": (2 * c, 3 * c),
        "deepgini": (3 * c, 3 * c + 1),
        "ned_pred": (3 * c + 1, 3 * c + 2),
        "cfr": (3 * c + 2, 3 * c + 2 + m),
    }


def assemble(
    bundle: DatasetBundle,
    split: str,
    supports: np.ndarray,
    cfr_vecs: np.ndarray,
) -> FeatureMatrix:
    """Build the raw (unstandardized) feature matrix for one split.

    ``supports`` holds the full per-class support vectors [n, C]; only the
    predicted-class entry enters the matrix. ``cfr_vecs`` [n, m] are the
    failure ratios of each input's concepts in similarity order.
    """
    tensors = bundle.split(split)
    probs = np.asarray(tensors["probs"], dtype=np.float64)
    if tensors["logits"] is None:
        raise ValueError(f"bundle lacks logits_{split}; cannot assemble features")
    logits = np.asarray(tensors["logits"], dtype=np.float64)
    preds = np.asarray(tensors["pred"])
    supports = np.asarray(supports, dtype=np.float64)
    cfr_vecs = np.atleast_2d(np.asarray(cfr_vecs, dtype=np.float64))

    n, c = probs.shape
    if not (logits.shape[0] == preds.shape[0] == supports.shape[0] == cfr_vecs.shape[0] == n):
        raise ValueError(
            f"row mismatch: probs {n}, logits {logits.shape[0]}, preds {preds.shape[0]}, "
            f"supports {supports.shape[0]}, cfr {cfr_vecs.shape[0]}"
        )
    if supports.shape[1] != c:
        raise ValueError(f"supports have {supports.shape[1]} classes, expected {c}")

    m = cfr_vecs.shape[1]
    onehot = np.zeros((n, c), dtype=np.float64)
    onehot[np.arange(n), preds] = 1.0
    gini = np.atleast_1d(uncertainty.deepgini(probs))
    ned_pred = supports[np.arange(n), preds]
    X = np.hstack([probs, logits, onehot, gini[:, None], ned_pred[:, None], cfr_vecs])
    return FeatureMatrix(X=X, column_map=layout(c, m), num_classes=c, m=m)


def standardize_fit(fm: FeatureMatrix) -> FeatureMatrix:
    """Z-score every column by its own statistics (fitting-set rows only).

    Columns with std below ``STD_FLOOR`` are mapped to all-zeros.
    """
    mean = fm.X.mean(axis=0)
    std = fm.X.std(axis=0)
    return replace(fm, X=_apply(fm.X, mean, std), standardized=True, mean=mean, std=std)


def standardize_apply(fm: FeatureMatrix, mean: np.ndarray, std: np.ndarray) -> FeatureMatrix:
    """Z-score with statistics fitted elsewhere (training rows)."""
    if mean is None or std is None:
        raise ValueError("standardize_apply needs fitted statistics")
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if mean.shape != (fm.n_features,) or std.shape != (fm.n_features,):
        raise ValueError("statistics do not match the feature layout")
    return replace(fm, X=_apply(fm.X, mean, std), standardized=True, mean=mean, std=std)


def _apply(X: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    constant = std < STD_FLOOR
    out = (X - mean) / np.where(constant, 1.0, std)
    out[:, constant] = 0.0
    return out


def save_features(fm: FeatureMatrix, prefix: str | Path) -> None:
    """Persist as ``<prefix>.bin`` (float32 tensor) + ``<prefix>.json`` sidecar."""
    prefix = Path(prefix)
    write_tensor(prefix.with_suffix(".bin"), fm.X.astype(np.float32))
    meta = {
        "column_map": {k: list(v) for k, v in fm.column_map.items()},
        "num_classes": fm.num_classes,
        "m": fm.m,
        "standardized": fm.standardized,
        "mean": fm.mean.tolist() if fm.mean is not None else None,
        "std": fm.std.tolist() if fm.std is not None else None,
    }
    with open(prefix.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_features(prefix: str | Path) -> FeatureMatrix:
    prefix = Path(prefix)
    X = read_tensor(prefix.with_suffix(".bin")).astype(np.float64)
    with open(prefix.with_suffix(".json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    return FeatureMatrix(
        X=X,
        column_map={k: (int(a), int(b)) for k, (a, b) in meta["column_map"].items()},
        num_classes=int(meta["num_classes"]),
        m=int(meta["m"]),
        standardized=bool(meta["standardized"]),
        mean=None if meta["mean"] is None else np.asarray(meta["mean"], dtype=np.float64),
        std=None if meta["std"] is None else np.asarray(meta["std"], dtype=np.float64),
    )
