"""
Terminal-state scores and the rewards derived from them.
"""

from __future__ import annotations

import math
from typing import Literal, NamedTuple

import numpy as np
from mcp.server.fastmcp.utilities.logging import get_logger
from pydantic import BaseModel, ConfigDict, Field

from flowdag.errors import DegenerateDataError, ShapeError
from flowdag.graph_state import BuilderState, induced_full_dag, state_from_adjacency
from flowdag.linear_fit import ols_fit, parents_of
from flowdag.synthetic import Dataset

logger = get_logger(__name__)


class RewardConfig(BaseModel):
    """Reward settings. `temperature=None` means n*d of the scored dataset."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["varsortability", "bic"] = "varsortability"
    scale: float = Field(default=100.0, gt=0)
    temperature: float | None = Field(default=None, gt=0)


class BicScore(NamedTuple):
    score: float
    ridge_fallback: bool


def _check_inputs(A: np.ndarray, X: Dataset) -> np.ndarray:
    A = np.asarray(A, dtype=np.uint8)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != X.d:
        raise ShapeError(f"Adjacency of shape {A.shape} does not match {X.d} data columns.")
    state_from_adjacency(A)  # raises InvalidGraphError on cycles
    return A


def varsortability(A: np.ndarray, X: Dataset) -> float:
    """Fraction of closure paths running from lower to higher marginal variance.

    Path membership is boolean: an ordered pair counts once for every length
    k in 1..d-1 at which a directed path of exactly that length exists.
    Equal variances count one half.
    """
    A = _check_inputs(A, X)
    var = X.X.var(axis=0)
    if np.any(var == 0):
        raise DegenerateDataError(f"Columns {np.flatnonzero(var == 0).tolist()} have zero variance.")
    # gamma[end, start] for the path start -> end, matching row = child
    gamma = np.where(var[None, :] < var[:, None], 1.0, np.where(var[None, :] == var[:, None], 0.5, 0.0))
    step = A.astype(np.int64)
    power = step.copy()
    hits = 0.0
    total = 0
    for _ in range(A.shape[0] - 1):
        reach = power > 0
        if not reach.any():
            break
        hits += float(gamma[reach].sum())
        total += int(reach.sum())
        power = ((step @ power) > 0).astype(np.int64)
    return hits / total if total else 0.5


def bic_linear_gaussian(A: np.ndarray, X: Dataset) -> BicScore:
    """S = -2 log L + |theta| log n for a linear-Gaussian SEM (lower is better).

    |theta| counts one coefficient per edge plus one residual variance per node.
    """
    A = _check_inputs(A, X)
    n = X.n
    log_lik = 0.0
    ridge = False
    for i in range(X.d):
        fit = ols_fit(X.X, i, parents_of(A, i))
        ridge |= fit.ridge_fallback
        if fit.residual_var <= 0:
            raise DegenerateDataError(f"Node {i} is fitted exactly by its parents; likelihood is unbounded.")
        log_lik += -0.5 * n * (math.log(2 * math.pi * fit.residual_var) + 1)
    if ridge:
        logger.warning("Rank-deficient design in BIC; ridge %.0e applied.", 1e-8)
    n_params = int(A.sum()) + X.d
    return BicScore(score=-2.0 * log_lik + n_params * math.log(n), ridge_fallback=ridge)


def log_reward(s_f: BuilderState, X: Dataset, cfg: RewardConfig) -> float:
    """Natural log of reward(); finite even where exp(-S/tau) underflows."""
    full = induced_full_dag(s_f)
    if cfg.kind == "bic":
        tau = cfg.temperature if cfg.temperature is not None else float(X.n * X.d)
        return -bic_linear_gaussian(full, X).score / tau
    nu = varsortability(full, X)
    return math.log(cfg.scale * nu) if nu > 0 else -math.inf


def reward(s_f: BuilderState, X: Dataset, cfg: RewardConfig) -> float:
    """Non-negative reward of an identified state, scored on its full DAG."""
    return math.exp(log_reward(s_f, X, cfg))
