"""Latent-to-shared-space alignment, concept extraction, the representative
concept set, and per-concept failure ratios."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from .tensorio import read_tensor, write_tensor

DEFAULT_M = 10
DEFAULT_RIDGE = 1e-3


class DegenerateEmbedding(ValueError):
    """An aligned vector has zero norm and cannot be cosine-scored."""


@dataclass(frozen=True)
class Aligner:
    """Linear map (with bias) from model latent space into the shared
    vision-language embedding space."""

    weights: np.ndarray  # float64 [d+1, e]; last row is the bias
    ridge_lambda: float
    r2: float

    @property
    def latent_dim(self) -> int:
        return self.weights.shape[0] - 1

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def map(self, latent: np.ndarray) -> np.ndarray:
        """Apply the affine map to one row or a batch of rows."""
        x = np.asarray(latent, dtype=np.float64)
        return x @ self.weights[:-1] + self.weights[-1]


@dataclass(frozen=True)
class ConceptAssignment:
    """Top-m concepts representing one input, by descending similarity."""

    input_id: int
    concept_ids: np.ndarray  # int64 [m], distinct
    similarities: np.ndarray  # float64 [m], non-increasing


@dataclass(frozen=True)
class ConceptTable:
    """The representative concept set with per-concept failure statistics."""

    concept_ids: np.ndarray  # int64 [R], ascending vocabulary ids
    text_emb: np.ndarray  # float64 [R, e], rows L2-normalized
    names: tuple[str, ...]
    total_count: np.ndarray  # int64 [R]
    faulty_count: np.ndarray  # int64 [R]
    cfr: np.ndarray  # float64 [R]
    m: int

    def rows_for(self, vocab_ids: np.ndarray) -> np.ndarray:
        """Map vocabulary concept ids to table row positions."""
        pos = np.searchsorted(self.concept_ids, vocab_ids)
        ok = (pos < len(self.concept_ids)) & (self.concept_ids[np.minimum(pos, len(self.concept_ids) - 1)] == vocab_ids)
        if not np.all(ok):
            missing = np.asarray(vocab_ids)[~ok].ravel()
            raise KeyError(f"concepts not in table: {missing[:5].tolist()}")
        return pos


def fit_aligner(latent: np.ndarray, clip_img: np.ndarray, ridge_lambda: float = DEFAULT_RIDGE) -> Aligner:
    """Least-squares affine map latent -> shared space, ridge on the weights.

    Solves the normal equations with a symmetric positive-definite solve;
    the bias row is never penalized. ``r2`` is the uniform mean over output
    dimensions of 1 - SS_res/SS_tot (0 for constant output dimensions).
    """
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be >= 0")
    x = np.asarray(latent, dtype=np.float64)
    y = np.asarray(clip_img, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"incompatible shapes {x.shape} vs {y.shape}")
    n, d = x.shape
    design = np.hstack([x, np.ones((n, 1))])
    gram = design.T @ design
    gram[np.arange(d), np.arange(d)] += ridge_lambda
    rhs = design.T @ y
    try:
        chol = scipy.linalg.cho_factor(gram, lower=True)
        weights = scipy.linalg.cho_solve(chol, rhs)
    except scipy.linalg.LinAlgError as err:
        raise ValueError(
            f"normal equations singular ({err}); set ridge_lambda > 0"
        ) from err

    pred = design @ weights
    ss_res = np.sum((y - pred) ** 2, axis=0)
    ss_tot = np.sum((y - y.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2_dim = np.where(ss_tot > 0, 1.0 - ss_res / ss_tot, 0.0)
    return Aligner(weights=weights, ridge_lambda=float(ridge_lambda), r2=float(r2_dim.mean()))


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    m = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return m / safe


def extract_concepts_batch(
    latent: np.ndarray,
    aligner: Aligner,
    concept_emb: np.ndarray,
    m: int = DEFAULT_M,
) -> tuple[np.ndarray, np.ndarray]:
    """Top-m concepts by cosine similarity for each latent row.

    Rows are mapped through the aligner and L2-normalized; concept
    embeddings are normalized likewise. Ties break toward the lower
    concept index. Returns (concept_ids [n, m], similarities [n, m]).
    """
    cemb = np.asarray(concept_emb, dtype=np.float64)
    if m > cemb.shape[0]:
        raise ValueError(f"m={m} exceeds {cemb.shape[0]} candidate concepts")
    aligned = aligner.map(np.atleast_2d(latent))
    norms = np.linalg.norm(aligned, axis=1)
    if np.any(norms == 0):
        raise DegenerateEmbedding(f"zero-norm aligned vector at row {int(np.argmin(norms))}")
    sims = (aligned / norms[:, None]) @ _normalize_rows(cemb).T
    # stable argsort keeps ascending concept index within exact similarity ties
    order = np.argsort(-sims, axis=1, kind="stable")[:, :m]
    return order.astype(np.int64), np.take_along_axis(sims, order, axis=1)


def extract_concepts(
    latent_row: np.ndarray,
    aligner: Aligner,
    concept_emb: np.ndarray,
    m: int = DEFAULT_M,
) -> ConceptAssignment:
    """Single-row convenience wrapper around :func:`extract_concepts_batch`."""
    ids, sims = extract_concepts_batch(np.asarray(latent_row)[None, :], aligner, concept_emb, m)
    return ConceptAssignment(input_id=0, concept_ids=ids[0], similarities=sims[0])


def build_rcs(
    train_assignment_ids: np.ndarray,
    concept_emb: np.ndarray,
    concept_names: tuple[str, ...] | list[str],
    m: int,
) -> ConceptTable:
    """Union of all per-input concept selections, ascending id order.

    ``train_assignment_ids`` must come from extraction over the full
    candidate vocabulary; counts are left at zero until ratios are filled.
    """
    ids = np.asarray(train_assignment_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("no assignments: cannot build an empty concept set")
    members = np.unique(ids)
    emb = _normalize_rows(np.asarray(concept_emb, dtype=np.float64)[members])
    return ConceptTable(
        concept_ids=members,
        text_emb=emb,
        names=tuple(concept_names[i] for i in members),
        total_count=np.zeros(len(members), dtype=np.int64),
        faulty_count=np.zeros(len(members), dtype=np.int64),
        cfr=np.zeros(len(members), dtype=np.float64),
        m=int(m),
    )


def compute_cfr(
    table: ConceptTable,
    train_assignment_ids: np.ndarray,
    failed: np.ndarray,
) -> ConceptTable:
    """Fill per-concept counts and failure ratios.

    An input "contains" a concept iff the concept appears in the input's
    top-m assignment (the same assignments that built the set). The ratio
    is the plain fraction of containing inputs that the model mispredicts,
    with no smoothing.
    """
    ids = np.asarray(train_assignment_ids, dtype=np.int64)
    failed = np.asarray(failed, dtype=bool)
    if ids.shape[0] != failed.shape[0]:
        raise ValueError(f"{ids.shape[0]} assignments vs {failed.shape[0]} failure flags")
    rows = table.rows_for(ids)
    n_rows = len(table.concept_ids)
    total = np.bincount(rows.ravel(), minlength=n_rows).astype(np.int64)
    faulty = np.bincount(rows[failed].ravel(), minlength=n_rows).astype(np.int64)
    if np.any(total == 0):
        raise RuntimeError("table member never selected; set construction invariant violated")
    return replace(table, total_count=total, faulty_count=faulty, cfr=faulty / total)


def concept_feature(assignment_ids: np.ndarray, table: ConceptTable) -> np.ndarray:
    """Failure ratios of an assignment's concepts, in similarity order."""
    return table.cfr[table.rows_for(np.asarray(assignment_ids, dtype=np.int64))]


def write_table(table: ConceptTable, emb_path: str | Path, csv_path: str | Path) -> None:
    write_tensor(emb_path, table.text_emb.astype(np.float32))
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["concept_id", "name", "total_count", "faulty_count", "cfr"])
        for i in range(len(table.concept_ids)):
            writer.writerow(
                [
                    int(table.concept_ids[i]),
                    table.names[i],
                    int(table.total_count[i]),
                    int(table.faulty_count[i]),
                    repr(float(table.cfr[i])),
                ]
            )


def read_table(emb_path: str | Path, csv_path: str | Path, m: int) -> ConceptTable:
    emb = read_tensor(emb_path).astype(np.float64)
    ids, names, totals, faulties, cfrs = [], [], [], [], []
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["concept_id", "name", "total_count", "faulty_count", "cfr"]:
            raise ValueError(f"{csv_path}: unexpected header {header}")
        for row in reader:
            ids.append(int(row[0]))
            names.append(row[1])
            totals.append(int(row[2]))
            faulties.append(int(row[3]))
            cfrs.append(float(row[4]))
    if len(ids) != emb.shape[0]:
        raise ValueError(f"{csv_path}: {len(ids)} rows vs {emb.shape[0]} embeddings")
    return ConceptTable(
        concept_ids=np.array(ids, dtype=np.int64),
        text_emb=emb,
        names=tuple(names),
        total_count=np.array(totals, dtype=np.int64),
        faulty_count=np.array(faulties, dtype=np.int64),
        cfr=np.array(cfrs, dtype=np.float64),
        m=int(m),
    )
