"""Deterministic rankings of test-input ids and their CSV serialization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class RankedList:
    """Input ids in rank order (best first) with their scores."""

    ids: np.ndarray  # int64 [n]
    scores: np.ndarray  # float64 [n], aligned with ids

    def __post_init__(self):
        if self.ids.shape != self.scores.shape:
            raise ValueError("ids and scores must align")

    def __len__(self) -> int:
        return int(self.ids.shape[0])


def rank_scores(scores: np.ndarray, descending: bool = True) -> RankedList:
    """Total order over inputs: by score, ties broken by ascending input id."""
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.arange(scores.shape[0], dtype=np.int64)
    key = -scores if descending else scores
    order = np.lexsort((ids, key))
    return RankedList(ids=ids[order], scores=scores[order])


def write_ranking_csv(ranked: RankedList, path: str | Path) -> None:
    lines = ["rank,input_id,score"]
    for rank, (i, s) in enumerate(zip(ranked.ids, ranked.scores), start=1):
        lines.append(f"{rank},{int(i)},{float(s)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_ranking_csv(path: str | Path) -> RankedList:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "rank,input_id,score":
        raise ValueError(f"{path}: not a ranking CSV")
    ids, scores = [], []
    for expected_rank, line in enumerate(lines[1:], start=1):
        rank_s, id_s, score_s = line.split(",")
        if int(rank_s) != expected_rank:
            raise ValueError(f"{path}: rank column not contiguous at {rank_s}")
        ids.append(int(id_s))
        scores.append(float(score_s))
    return RankedList(ids=np.array(ids, dtype=np.int64), scores=np.array(scores, dtype=np.float64))
