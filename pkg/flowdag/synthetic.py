"""
Ground-truth graphs and observational data for linear SEMs.

All generators take an explicit seed and draw from numpy's Generator, so a
(function, arguments, seed) triple always reproduces the same output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from flowdag.errors import InvalidDensityError, InvalidDimensionError, InvalidGraphError, InvalidParameterError
from flowdag.graph_state import state_from_adjacency


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "gumbel"):
            raise InvalidParameterError(f"Unknown noise kind '{self.kind}'. Valid values are: gaussian, gumbel")
        if not self.scale > 0:
            raise InvalidParameterError(f"Noise scale must be positive, got {self.scale}.")

    def draw(self, rng: np.random.Generator, size: tuple[int, int]) -> np.ndarray:
        if self.kind == "gumbel":
            return rng.gumbel(loc=0.0, scale=self.scale, size=size)
        return rng.normal(loc=0.0, scale=self.scale, size=size)


@dataclass(frozen=True)
class WeightedGraph:
    A_true: np.ndarray
    W: np.ndarray

    @property
    def d(self) -> int:
        return self.A_true.shape[0]


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.columns:
            object.__setattr__(self, "columns", [f"x{i + 1}" for i in range(self.X.shape[1])])

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def _check_dimension(d: int) -> None:
    if d < 2:
        raise InvalidDimensionError(f"Node count must be at least 2, got {d}.")


def _relabel(B: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    perm = rng.permutation(B.shape[0])
    return B[np.ix_(perm, perm)]


def sample_er_graph(d: int, beta: float, seed: int) -> np.ndarray:
    """Erdos-Renyi DAG with on average beta*d edges.

    Each position below the diagonal (row = child, in a random node order) is
    kept with probability beta*d / (d(d-1)/2).
    """
    _check_dimension(d)
    max_edges = d * (d - 1) / 2
    if beta < 1 or beta * d > max_edges:
        raise InvalidDensityError(
            f"Edge density beta={beta} needs {beta * d:g} edges; a DAG on {d} nodes holds 1..{max_edges:g}."
        )
    rng = np.random.default_rng(seed)
    p = min(1.0, beta * d / max_edges)
    B = np.tril((rng.random((d, d)) < p).astype(np.uint8), k=-1)
    return _relabel(B, rng)


def sample_sf_graph(d: int, beta: int, seed: int) -> np.ndarray:
    """Scale-free DAG by preferential attachment.

    Nodes arrive in order; each newcomer points to min(beta, #existing) older
    nodes drawn without replacement with probability proportional to degree + 1,
    so early hubs collect a heavy-tailed number of parents.
    """
    _check_dimension(d)
    if not 1 <= beta < d:
        raise InvalidParameterError(f"Attachment count must satisfy 1 <= beta < d, got beta={beta}, d={d}.")
    rng = np.random.default_rng(seed)
    B = np.zeros((d, d), dtype=np.uint8)
    degree = np.zeros(d)
    for node in range(1, d):
        weights = degree[:node] + 1.0
        k = min(int(beta), node)
        children = rng.choice(node, size=k, replace=False, p=weights / weights.sum())
        B[children, node] = 1
        degree[children] += 1
        degree[node] += k
    return _relabel(B, rng)


def sample_weights(A: np.ndarray, seed: int) -> WeightedGraph:
    """Edge weights uniform on [-2, -0.5] U [0.5, 2]."""
    A = np.asarray(A, dtype=np.uint8)
    try:
        state_from_adjacency(A)
    except InvalidGraphError as e:
        raise InvalidGraphError(f"Cannot assign weights to a cyclic graph: {e}") from e
    rng = np.random.default_rng(seed)
    magnitude = rng.uniform(0.5, 2.0, size=A.shape)
    sign = rng.choice(np.array([-1.0, 1.0]), size=A.shape)
    return WeightedGraph(A_true=A, W=A * magnitude * sign)


def _ancestral_order(A: np.ndarray) -> list[int]:
    remaining = set(range(A.shape[0]))
    order = []
    while remaining:
        ready = sorted(i for i in remaining if not any(A[i, j] for j in remaining))
        order.extend(ready)
        remaining.difference_update(ready)
    return order


def simulate_sem(g: WeightedGraph, n: int, noise: NoiseSpec, seed: int) -> Dataset:
    """Draws n samples of x_i = sum_j W[i][j] x_j + eps_i in ancestral order."""
    if n < 1:
        raise InvalidParameterError(f"Sample count must be at least 1, got {n}.")
    rng = np.random.default_rng(seed)
    Z = noise.draw(rng, (n, g.d))
    X = np.zeros((n, g.d))
    for i in _ancestral_order(g.A_true):
        X[:, i] = X @ g.W[i] + Z[:, i]
    return Dataset(X=X)


def standardize_dataset(data: Dataset) -> Dataset:
    """Zero mean, unit variance per column (removes varsortability)."""
    X = data.X - data.X.mean(axis=0)
    return Dataset(X=X / X.std(axis=0), columns=list(data.columns))
