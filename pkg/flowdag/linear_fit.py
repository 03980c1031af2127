"""
Per-node linear regressions shared by the BIC score and the pruners.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numba import njit

RIDGE = 1e-8


class NodeFit(NamedTuple):
    coef: np.ndarray
    residual_var: float
    ridge_fallback: bool


def parents_of(A: np.ndarray, i: int) -> np.ndarray:
    return np.flatnonzero(A[i])


def ols_fit(X: np.ndarray, i: int, parents: np.ndarray) -> NodeFit:
    """Least squares of column i on `parents` with an intercept.

    Residual variance is the MLE (divided by n). A rank-deficient design is
    solved with a 1e-8 ridge and flagged.
    """
    y = X[:, i] - X[:, i].mean()
    if parents.size == 0:
        return NodeFit(np.zeros(0), float(y @ y) / len(y), False)
    Z = X[:, parents] - X[:, parents].mean(axis=0)
    gram = Z.T @ Z
    ridge = np.linalg.matrix_rank(Z) < parents.size
    if ridge:
        gram = gram + RIDGE * np.eye(parents.size)
    coef = np.linalg.solve(gram, Z.T @ y)
    resid = y - Z @ coef
    return NodeFit(coef, float(resid @ resid) / len(y), bool(ridge))


@njit(cache=True)
def soft_threshold(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@njit(cache=True)
def _lasso_sweeps(Z, y, lam, tol, max_sweeps):
    n, p = Z.shape
    beta = np.zeros(p)
    resid = y.copy()
    col_sq = np.zeros(p)
    for j in range(p):
        acc = 0.0
        for k in range(n):
            acc += Z[k, j] * Z[k, j]
        col_sq[j] = acc / n
    for _ in range(max_sweeps):
        max_step = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            acc = 0.0
            for k in range(n):
                acc += Z[k, j] * resid[k]
            new = soft_threshold(acc / n + col_sq[j] * beta[j], lam) / col_sq[j]
            step = new - beta[j]
            if step != 0.0:
                for k in range(n):
                    resid[k] -= step * Z[k, j]
                beta[j] = new
                if abs(step) > max_step:
                    max_step = abs(step)
        if max_step < tol:
            return beta, True
    return beta, False


def lasso_fit(X: np.ndarray, i: int, parents: np.ndarray, lam: float,
              tol: float = 1e-6, max_sweeps: int = 10_000) -> tuple[np.ndarray, bool]:
    """Minimises (1/2n)||y - Z b||^2 + lam ||b||_1 by cyclic coordinate descent.

    Returns the coefficients and whether the sweeps converged.
    """
    if parents.size == 0:
        return np.zeros(0), True
    y = X[:, i] - X[:, i].mean()
    Z = np.ascontiguousarray(X[:, parents] - X[:, parents].mean(axis=0))
    beta, converged = _lasso_sweeps(Z, np.ascontiguousarray(y), float(lam), float(tol), int(max_sweeps))
    return beta, bool(converged)
