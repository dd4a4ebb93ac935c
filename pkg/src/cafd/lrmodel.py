"""Binary logistic-regression fault detector: training, prediction, ranking,
and feature-importance analysis."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.special import expit

from .features import FeatureMatrix
from .ranking import RankedList, rank_scores
from .tensorio import read_tensor, write_tensor

DEFAULT_L2 = 1.0
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 5000


@dataclass(frozen=True)
class LRModel:
    beta: np.ndarray  # float64 [F]
    bias: float
    lambda_l2: float
    class_weights: tuple[float, float]  # (w_pos, w_neg)
    converged: bool
    n_iters: int
    grad_norm: float  # relative: ||g|| / max(1, ||g at zero init||)
    column_map_hash: str | None = None


@dataclass(frozen=True)
class ImportanceReport:
    coef_magnitude: np.ndarray  # |beta_j|
    odds_ratio: np.ndarray  # exp(beta_j)
    rfe_order: np.ndarray  # feature indices, eliminated first


def column_map_hash(column_map: dict[str, tuple[int, int]]) -> str:
    canon = json.dumps({k: list(v) for k, v in sorted(column_map.items())})
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _resolve_weights(y: np.ndarray, class_weight: str) -> tuple[float, float]:
    n = y.shape[0]
    n_pos = int(y.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("training labels contain a single class")
    if class_weight == "balanced":
        return n / (2.0 * n_pos), n / (2.0 * n_neg)
    if class_weight == "none":
        return 1.0, 1.0
    raise ValueError(f"class_weight must be 'balanced' or 'none', got {class_weight!r}")


def _objective_grad(
    params: np.ndarray,
    X: np.ndarray,
    signs: np.ndarray,
    weights: np.ndarray,
    lam: float,
) -> tuple[float, np.ndarray]:
    """Weighted regularized negative log-likelihood and its gradient.

    ``params`` stacks [beta, bias]; the bias is unregularized.
    """
    beta, bias = params[:-1], params[-1]
    z = X @ beta + bias
    sz = signs * z
    obj = float(np.sum(weights * np.logaddexp(0.0, -sz)) + 0.5 * lam * beta @ beta)
    dz = -weights * signs * expit(-sz)
    grad = np.empty_like(params)
    grad[:-1] = X.T @ dz + lam * beta
    grad[-1] = dz.sum()
    return obj, grad


def train(
    X: FeatureMatrix | np.ndarray,
    y: np.ndarray,
    lambda_l2: float = DEFAULT_L2,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    class_weight: str = "balanced",
    method: str = "newton",
) -> LRModel:
    """Fit by minimizing sum_i w_i*log(1+exp(-s_i*(x_i.beta+b))) + (lam/2)|beta|^2.

    Deterministic full-batch optimization from an all-zero start; ``newton``
    uses damped Newton steps, ``gd`` plain gradient descent, both with
    backtracking line search and the same stopping rule (relative gradient
    norm <= tol). Identical inputs give bit-identical models.
    """
    fm = X if isinstance(X, FeatureMatrix) else None
    Xmat = np.asarray(X.X if fm is not None else X, dtype=np.float64)
    y = np.asarray(y).astype(bool)
    if not np.all(np.isfinite(Xmat)):
        raise ValueError("features contain non-finite values")
    if Xmat.shape[0] != y.shape[0]:
        raise ValueError(f"{Xmat.shape[0]} rows vs {y.shape[0]} labels")
    w_pos, w_neg = _resolve_weights(y, class_weight)
    signs = np.where(y, 1.0, -1.0)
    weights = np.where(y, w_pos, w_neg)
    n_features = Xmat.shape[1]

    if method not in ("newton", "gd"):
        raise ValueError(f"method must be 'newton' or 'gd', got {method!r}")

    params = np.zeros(n_features + 1)
    obj, grad = _objective_grad(params, Xmat, signs, weights, lambda_l2)
    g0 = max(1.0, float(np.linalg.norm(grad)))
    rel = float(np.linalg.norm(grad)) / g0
    n_iters = 0
    converged = rel <= tol
    t_warm = 1.0  # gd step size carried between iterations

    while not converged and n_iters < max_iters:
        if method == "newton":
            step = _newton_direction(params, Xmat, weights, lambda_l2, grad)
            t_init = 1.0
        else:
            step = -grad
            t_init = min(t_warm * 2.0, 1e6)
        params, obj, grad, t_warm = _backtrack(
            params, step, obj, grad, Xmat, signs, weights, lambda_l2, t_init
        )
        n_iters += 1
        rel = float(np.linalg.norm(grad)) / g0
        converged = rel <= tol

    return LRModel(
        beta=params[:-1].copy(),
        bias=float(params[-1]),
        lambda_l2=float(lambda_l2),
        class_weights=(w_pos, w_neg),
        converged=converged,
        n_iters=n_iters,
        grad_norm=rel,
        column_map_hash=column_map_hash(fm.column_map) if fm is not None else None,
    )


def _newton_direction(params, X, weights, lam, grad) -> np.ndarray:
    beta, bias = params[:-1], params[-1]
    z = X @ beta + bias
    p = expit(z)
    r = weights * p * (1.0 - p)
    design = np.hstack([X, np.ones((X.shape[0], 1))])
    hess = design.T @ (design * r[:, None])
    hess[np.arange(len(beta)), np.arange(len(beta))] += lam
    # tiny damping keeps the factorization well-posed when sigmoids saturate
    hess[np.diag_indices_from(hess)] += 1e-10
    try:
        chol = scipy.linalg.cho_factor(hess, lower=True)
        return -scipy.linalg.cho_solve(chol, grad)
    except scipy.linalg.LinAlgError:
        return -grad


def _backtrack(params, step, obj, grad, X, signs, weights, lam, t_init=1.0):
    """Armijo backtracking; returns the accepted (params, obj, grad, t)."""
    slope = float(grad @ step)
    if slope >= 0:  # not a descent direction; fall back to steepest descent
        step = -grad
        slope = -float(grad @ grad)
    t = t_init
    for _ in range(200):
        cand = params + t * step
        cand_obj, cand_grad = _objective_grad(cand, X, signs, weights, lam)
        if cand_obj <= obj + 1e-4 * t * slope:
            return cand, cand_obj, cand_grad, t
        t *= 0.5
    return cand, cand_obj, cand_grad, t


def predict_proba(model: LRModel, X: FeatureMatrix | np.ndarray) -> np.ndarray:
    """Fault probability sigmoid(x.beta + b); stable for |z| up to 1e4."""
    if isinstance(X, FeatureMatrix):
        if model.column_map_hash is not None and column_map_hash(X.column_map) != model.column_map_hash:
            raise ValueError("feature column layout differs from the training layout")
        Xmat = X.X
    else:
        Xmat = np.asarray(X, dtype=np.float64)
    if Xmat.shape[1] != model.beta.shape[0]:
        raise ValueError(f"{Xmat.shape[1]} columns vs model with {model.beta.shape[0]}")
    p = expit(Xmat @ model.beta + model.bias)
    # keep the contract open-interval even where the sigmoid underflows
    return np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def rank_cafd(model: LRModel, X_test: FeatureMatrix | np.ndarray) -> RankedList:
    """Rank test inputs by descending fault probability."""
    return rank_scores(predict_proba(model, X_test), descending=True)


def importance(
    model: LRModel,
    X: FeatureMatrix | np.ndarray,
    y: np.ndarray,
    rfe_step: float = 0.1,
    **train_kwargs,
) -> ImportanceReport:
    """Coefficient magnitudes, odds ratios, and recursive elimination order.

    Each elimination round retrains on the remaining features and drops the
    ceil(step * remaining) smallest-|beta| ones (never the last feature);
    ties break toward the lower feature index.
    """
    if not 0 < rfe_step <= 0.5:
        raise ValueError(f"rfe_step must be in (0, 0.5], got {rfe_step}")
    Xmat = np.asarray(X.X if isinstance(X, FeatureMatrix) else X, dtype=np.float64)
    train_kwargs.setdefault("lambda_l2", model.lambda_l2)

    remaining = list(range(Xmat.shape[1]))
    order: list[int] = []
    while len(remaining) > 1:
        sub = train(Xmat[:, remaining], y, **train_kwargs)
        k = min(math.ceil(rfe_step * len(remaining)), len(remaining) - 1)
        by_weight = sorted(range(len(remaining)), key=lambda j: (abs(sub.beta[j]), remaining[j]))
        dropped = by_weight[:k]  # least important first within the round
        order.extend(remaining[j] for j in dropped)
        remaining = [f for j, f in enumerate(remaining) if j not in set(dropped)]
    order.extend(remaining)

    return ImportanceReport(
        coef_magnitude=np.abs(model.beta),
        odds_ratio=np.exp(model.beta),
        rfe_order=np.array(order, dtype=np.int64),
    )


def save_model(model: LRModel, prefix: str | Path) -> None:
    prefix = Path(prefix)
    params = np.concatenate([model.beta, [model.bias]]).astype(np.float32)
    write_tensor(prefix.with_suffix(".bin"), params)
    meta = {
        "lambda_l2": model.lambda_l2,
        "class_weights": list(model.class_weights),
        "converged": model.converged,
        "n_iters": model.n_iters,
        "grad_norm": model.grad_norm,
        "column_map_hash": model.column_map_hash,
    }
    with open(prefix.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(prefix: str | Path) -> LRModel:
    prefix = Path(prefix)
    params = read_tensor(prefix.with_suffix(".bin")).astype(np.float64)
    with open(prefix.with_suffix(".json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    return LRModel(
        beta=params[:-1],
        bias=float(params[-1]),
        lambda_l2=float(meta["lambda_l2"]),
        class_weights=tuple(meta["class_weights"]),
        converged=bool(meta["converged"]),
        n_iters=int(meta["n_iters"]),
        grad_norm=float(meta["grad_norm"]),
        column_map_hash=meta["column_map_hash"],
    )
