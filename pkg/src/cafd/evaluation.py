"""Fault-cluster ingestion, fault detection rate, a desk-scale density
clustering substitute, signed-rank testing, and comparison reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm, rankdata

from .ranking import RankedList

DEFAULT_BUDGETS = (0.01, 0.03, 0.05, 0.07, 0.10, 0.12)
EXACT_LIMIT = 25  # largest n with an exact signed-rank null distribution


class DegeneratePairs(ValueError):
    """All paired differences are zero; the signed-rank test is undefined."""


@dataclass(frozen=True)
class FaultClustering:
    """Map from failing test input id to fault-cluster id (-1 = noise)."""

    cluster_of: dict[int, int]

    @property
    def n_faults(self) -> int:
        return len({c for c in self.cluster_of.values() if c >= 0})


@dataclass(frozen=True)
class FdrResult:
    budget_fraction: float
    b: int
    detected: int
    total: int
    fdr: float


def fdr(
    ranking: RankedList,
    clustering: FaultClustering,
    budget_fraction: float,
    n_test: int,
) -> FdrResult:
    """Distinct non-noise clusters covered by the top-b inputs, over
    min(b, total clusters).

    b = round(budget_fraction * n_test), at least 1. With zero total
    clusters the rate is reported as 0.0.
    """
    if len(ranking) == 0:
        raise ValueError("empty ranking")
    if not 0 < budget_fraction <= 1:
        raise ValueError(f"budget_fraction {budget_fraction} outside (0, 1]")
    b = max(1, int(math.floor(budget_fraction * n_test + 0.5)))
    picked = ranking.ids[:b]
    clusters = {clustering.cluster_of[int(i)] for i in picked if int(i) in clustering.cluster_of}
    detected = len({c for c in clusters if c >= 0})
    total = clustering.n_faults
    denom = min(b, total)
    return FdrResult(
        budget_fraction=float(budget_fraction),
        b=b,
        detected=detected,
        total=total,
        fdr=detected / denom if denom > 0 else 0.0,
    )


def dbscan_substitute(
    features: np.ndarray,
    eps: float,
    min_pts: int,
    input_ids: np.ndarray | None = None,
) -> FaultClustering:
    """Deterministic density-based clustering of failing inputs.

    Core points have >= min_pts neighbors within eps (Euclidean, inclusive,
    self counted); clusters are connected components of core points plus
    border points, a border point attaching to its first core neighbor in
    index order. Unreachable points are noise (-1). Cluster ids are assigned
    0,1,2,... by each cluster's smallest member input id.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] == 0:
        raise ValueError(f"features must be [n, q>0], got {x.shape}")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    n = x.shape[0]
    ids = np.arange(n, dtype=np.int64) if input_ids is None else np.asarray(input_ids, dtype=np.int64)
    if ids.shape[0] != n:
        raise ValueError("input_ids must align with features")

    norms = np.einsum("ij,ij->i", x, x)
    d2 = norms[:, None] + norms[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    adjacent = d2 <= eps * eps
    core = adjacent.sum(axis=1) >= min_pts

    component = np.full(n, -1, dtype=np.int64)
    comp_id = 0
    for i in range(n):
        if not core[i] or component[i] >= 0:
            continue
        stack = [i]
        component[i] = comp_id
        while stack:
            j = stack.pop()
            for nb in np.flatnonzero(adjacent[j] & core):
                if component[nb] < 0:
                    component[nb] = comp_id
                    stack.append(int(nb))
        comp_id += 1

    for i in range(n):
        if core[i]:
            continue
        core_neighbors = np.flatnonzero(adjacent[i] & core)
        if core_neighbors.size:
            component[i] = component[core_neighbors[0]]

    # renumber components by their smallest member input id
    members: dict[int, int] = {}
    for i in range(n):
        c = int(component[i])
        if c >= 0:
            members[c] = min(members.get(c, int(ids[i])), int(ids[i]))
    renumber = {c: rank for rank, c in enumerate(sorted(members, key=members.__getitem__))}
    return FaultClustering(
        cluster_of={int(ids[i]): renumber.get(int(component[i]), -1) if component[i] >= 0 else -1 for i in range(n)}
    )


def _signed_rank_stats(a: np.ndarray, b: np.ndarray):
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    d = d[d != 0.0]
    if d.size == 0:
        raise DegeneratePairs("all paired differences are zero")
    if d.size < 5:
        raise ValueError(f"need >= 5 non-zero differences, got {d.size}")
    ranks = rankdata(np.abs(d))  # mean ranks on ties
    w_plus = float(ranks[d > 0].sum())
    return d, ranks, w_plus


def _exact_tail_probs(ranks: np.ndarray, w_plus: float) -> tuple[float, float]:
    """P(W+ <= w) and P(W+ >= w) under the exact null with tie-adjusted ranks.

    Mean ranks are half-integers, so doubled ranks are integers and the
    null distribution follows from subset-sum counting, equivalent to full
    2^n sign enumeration.
    """
    doubled = np.rint(2.0 * ranks).astype(np.int64)  # every doubled rank >= 2
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        counts[r:] += counts[:-r].copy()
    n_patterns = 2.0 ** len(ranks)
    w2 = int(np.rint(2.0 * w_plus))
    p_le = counts[: w2 + 1].sum() / n_patterns
    p_ge = counts[w2:].sum() / n_patterns
    return p_le, p_ge


def _approx_tail_probs(ranks: np.ndarray, w_plus: float) -> tuple[float, float]:
    """Normal approximation with tie correction and continuity correction."""
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(((tie_counts**3 - tie_counts) / 48.0).sum())
    se = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0 - tie_term)
    p_le = float(norm.cdf((w_plus - mean + 0.5) / se))
    p_ge = float(norm.sf((w_plus - mean - 0.5) / se))
    return p_le, p_ge


def wilcoxon_signed_rank(
    a: np.ndarray,
    b: np.ndarray,
    alternative: str = "two-sided",
) -> tuple[float, float]:
    """Signed-rank test on paired samples; returns (statistic, p-value).

    Zero differences are dropped; tied absolute differences receive mean
    ranks. The null distribution is exact for n <= 25 and a tie- and
    continuity-corrected normal approximation beyond. The statistic is the
    classic min(W+, W-). ``alternative`` 'greater' tests median(a - b) > 0.
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    d, ranks, w_plus = _signed_rank_stats(a, b)
    n = d.size
    w_minus = n * (n + 1) / 2.0 - w_plus
    tails = _exact_tail_probs if n <= EXACT_LIMIT else _approx_tail_probs
    p_le, p_ge = tails(ranks, w_plus)
    if alternative == "two-sided":
        p = min(1.0, 2.0 * min(p_le, p_ge))
    elif alternative == "greater":
        p = p_ge
    else:
        p = p_le
    return min(w_plus, w_minus), p


@dataclass
class ComparisonReport:
    """Per-budget fault detection rates for several methods, with
    signed-rank p-values against the designated primary method."""

    primary: str
    budgets: list[float]
    methods: list[str]
    rates: dict[str, list[float]]
    p_values: dict[str, float | None] = field(default_factory=dict)

    def best_two(self, budget_index: int) -> tuple[str, str | None]:
        ordered = sorted(self.methods, key=lambda m: (-self.rates[m][budget_index], m))
        return ordered[0], ordered[1] if len(ordered) > 1 else None

    def improvement_pct(self, budget_index: int) -> float | None:
        """Primary's gain over the best baseline, relative to its headroom."""
        others = [m for m in self.methods if m != self.primary]
        if not others:
            return None
        second = max(self.rates[m][budget_index] for m in others)
        if second >= 1.0:
            return 0.0
        ours = self.rates[self.primary][budget_index]
        return (ours - second) / (1.0 - second) * 100.0

    def to_csv(self) -> str:
        lines = ["budget," + ",".join(self.methods)]
        for bi, budget in enumerate(self.budgets):
            cells = [repr(round(float(self.rates[m][bi]), 12)) for m in self.methods]
            lines.append(f"{budget!r}," + ",".join(cells))
        return "\n".join(lines) + "\n"

    def pvalues_csv(self) -> str:
        lines = [f"method,p_vs_{self.primary}"]
        for m in self.methods:
            if m == self.primary:
                continue
            p = self.p_values.get(m)
            lines.append(f"{m},{'' if p is None else repr(p)}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        """Aligned table; best per row marked '*', second-best '+'."""
        width = max(10, *(len(m) + 2 for m in self.methods))
        header = "budget".ljust(8) + "".join(m.rjust(width) for m in self.methods)
        lines = [header, "-" * len(header)]
        for bi, budget in enumerate(self.budgets):
            best, second = self.best_two(bi)
            row = f"{budget:<8.2%}"
            for m in self.methods:
                mark = "*" if m == best else ("+" if m == second else " ")
                row += f"{self.rates[m][bi]:.4f}{mark}".rjust(width)
            lines.append(row)
        if self.p_values:
            lines.append("")
            for m in self.methods:
                if m != self.primary:
                    p = self.p_values.get(m)
                    shown = "n/a" if p is None else f"{p:.4g}"
                    lines.append(f"signed-rank p ({self.primary} vs {m}): {shown}")
        return "\n".join(lines) + "\n"


def compare(
    rankings: dict[str, RankedList],
    clustering: FaultClustering,
    budgets: list[float] | tuple[float, ...],
    n_test: int,
    primary: str | None = None,
) -> ComparisonReport:
    """Fault detection rate per method per budget plus significance tests.

    ``primary`` defaults to the first method; p-values compare each other
    method's per-budget rates against the primary's and are omitted (None)
    when the test is undefined for the pairing.
    """
    if not rankings:
        raise ValueError("no rankings to compare")
    methods = list(rankings)
    if primary is None:
        primary = methods[0]
    if primary not in rankings:
        raise ValueError(f"primary {primary!r} not among methods {methods}")
    rates = {
        name: [fdr(r, clustering, budget, n_test).fdr for budget in budgets]
        for name, r in rankings.items()
    }
    report = ComparisonReport(
        primary=primary,
        budgets=[float(x) for x in budgets],
        methods=methods,
        rates=rates,
    )
    for name in methods:
        if name == primary:
            continue
        try:
            _, p = wilcoxon_signed_rank(np.array(rates[primary]), np.array(rates[name]))
            report.p_values[name] = p
        except (DegeneratePairs, ValueError):
            report.p_values[name] = None
    return report


def write_clusters_csv(clustering: FaultClustering, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["input_id", "cluster_id"])
        for input_id in sorted(clustering.cluster_of):
            writer.writerow([input_id, clustering.cluster_of[input_id]])


def read_clusters_csv(path: str | Path) -> FaultClustering:
    cluster_of = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["input_id", "cluster_id"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            cluster_of[int(row[0])] = int(row[1])
    return FaultClustering(cluster_of=cluster_of)
