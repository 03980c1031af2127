"""
Pruning of fully-connected DAGs and structure-recovery metrics.
"""

from __future__ import annotations

from typing import Literal, NamedTuple, Sequence

import numpy as np
from mcp.server.fastmcp.utilities.logging import get_logger
from pydantic import BaseModel, Field
from scipy.stats import rankdata

from flowdag.errors import EmptyInputError, InvalidParameterError, ShapeError, UndefinedAurocError
from flowdag.graph_state import state_from_adjacency
from flowdag.linear_fit import lasso_fit, ols_fit, parents_of
from flowdag.synthetic import Dataset

logger = get_logger(__name__)


class PruneResult(NamedTuple):
    graph: np.ndarray
    weights: np.ndarray
    warnings: tuple[str, ...]


class MetricReport(BaseModel):
    tpr: float = Field(ge=0, le=1)
    fdr: float = Field(ge=0, le=1)
    shd: int = Field(ge=0)
    e_shd: float | None = None
    auroc: float | None = Field(default=None, ge=0, le=1)


def _as_graph(A) -> np.ndarray:
    return (np.asarray(A) != 0).astype(np.uint8)


def prune_threshold(full: np.ndarray, X: Dataset, omega: float) -> PruneResult:
    """Drops every edge whose OLS coefficient is smaller than omega in magnitude."""
    if omega < 0:
        raise InvalidParameterError(f"Threshold must be non-negative, got {omega}.")
    full = _as_graph(full)
    state_from_adjacency(full)
    weights = np.zeros(full.shape)
    graph = np.zeros_like(full)
    warnings = []
    for i in range(full.shape[0]):
        parents = parents_of(full, i)
        fit = ols_fit(X.X, i, parents)
        if fit.ridge_fallback:
            warnings.append(f"node {i}: rank-deficient parents, ridge fallback")
        keep = np.abs(fit.coef) >= omega
        weights[i, parents[keep]] = fit.coef[keep]
        graph[i, parents[keep]] = 1
    for message in warnings:
        logger.warning(message)
    return PruneResult(graph=graph, weights=weights, warnings=tuple(warnings))


def prune_lasso(full: np.ndarray, X: Dataset, lam: float) -> PruneResult:
    """Keeps the edges with a nonzero L1-penalised regression coefficient."""
    if lam < 0:
        raise InvalidParameterError(f"Lasso penalty must be non-negative, got {lam}.")
    full = _as_graph(full)
    state_from_adjacency(full)
    weights = np.zeros(full.shape)
    warnings = []
    for i in range(full.shape[0]):
        parents = parents_of(full, i)
        coef, converged = lasso_fit(X.X, i, parents, lam)
        if not converged:
            warnings.append(f"node {i}: coordinate descent did not converge, last iterate used")
        weights[i, parents] = coef
    for message in warnings:
        logger.warning(message)
    return PruneResult(graph=(weights != 0).astype(np.uint8), weights=weights, warnings=tuple(warnings))


def prune(full: np.ndarray, X: Dataset, method: Literal["threshold", "lasso"], param: float) -> PruneResult:
    if method == "threshold":
        return prune_threshold(full, X, param)
    if method == "lasso":
        return prune_lasso(full, X, param)
    raise InvalidParameterError(f"Unknown pruning method '{method}'. Valid values are: threshold, lasso")


def shd(pred: np.ndarray, truth: np.ndarray) -> int:
    """Node pairs whose edge status differs; a reversal counts once."""
    P, T = _as_graph(pred), _as_graph(truth)
    differs = (P != T) | (P != T).T
    return int(np.triu(differs, k=1).sum())


def compare(pred: np.ndarray, truth: np.ndarray) -> MetricReport:
    """Scores a predicted graph against the ground truth.

    Args:
        pred: Predicted adjacency, row = child. Nonzero entries count as edges.
        truth: Ground-truth adjacency of the same size.

    Returns:
        TPR and FDR over directed edges (TPR is 1 for an empty truth) and the
        structural Hamming distance with a reversal counted once.

    Raises:
        ShapeError: If the two graphs differ in size.
    """
    P, T = _as_graph(pred), _as_graph(truth)
    if P.shape != T.shape:
        raise ShapeError(f"Predicted graph {P.shape} and truth {T.shape} differ in size.")
    n_truth = int(T.sum())
    n_pred = int(P.sum())
    true_pos = int((P & T).sum())
    return MetricReport(
        tpr=true_pos / n_truth if n_truth else 1.0,
        fdr=(n_pred - true_pos) / max(n_pred, 1),
        shd=shd(P, T),
    )


def expected_shd(samples: Sequence[np.ndarray], truth: np.ndarray) -> float:
    if len(samples) == 0:
        raise EmptyInputError("E-SHD needs at least one sampled graph.")
    return float(np.mean([shd(g, truth) for g in samples]))


def auroc_from_scores(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUROC with midranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAurocError("AUROC needs both positive and negative pairs.")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def edge_marginals(samples: Sequence[np.ndarray]) -> np.ndarray:
    if len(samples) == 0:
        raise EmptyInputError("Edge marginals need at least one sampled graph.")
    return np.mean([_as_graph(g) for g in samples], axis=0)


def auroc(samples: Sequence[np.ndarray], truth: np.ndarray) -> float:
    """AUROC of per-edge sample frequencies over all d(d-1) ordered pairs."""
    marginals = edge_marginals(samples)
    T = _as_graph(truth)
    off_diag = ~np.eye(T.shape[0], dtype=bool)
    return auroc_from_scores(marginals[off_diag], T[off_diag])
