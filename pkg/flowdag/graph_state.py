"""
Incremental DAG construction state.

Orientation convention used throughout flowdag: A[i][j] = 1 encodes the edge
v_j -> v_i (row = child, column = parent). H[i][j] = 1 iff v_i is reachable
from v_j, with ones on the diagonal.

Matrices are stored as packed bit rows (one Python int per row, bit j = column
j), so the closure update for a new edge is a handful of word-parallel ORs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterator

import numpy as np

from flowdag.errors import (
    ForbiddenActionError,
    InvalidDimensionError,
    InvalidGraphError,
    NotIdentifiedError,
)


class SamplingCase(IntEnum):
    """Trajectory regimes.

    FULL builds all d(d-1)/2 edges, IDENTIFY stops once the topological sort
    is identified, PATH grows a directed Hamiltonian path.
    """

    FULL = 1
    IDENTIFY = 2
    PATH = 3


@dataclass(frozen=True, slots=True)
class EdgeAction:
    """Adds the edge source -> target, i.e. sets A[target][source] = 1."""

    source: int
    target: int

    def index(self, d: int) -> int:
        """Row-major position of A[target][source]."""
        return self.target * d + self.source

    @classmethod
    def from_index(cls, index: int, d: int) -> "EdgeAction":
        target, source = divmod(int(index), d)
        return cls(source=source, target=target)


@dataclass(frozen=True, slots=True)
class BuilderState:
    d: int
    adj: tuple[int, ...]
    closure: tuple[int, ...]
    closure_t: tuple[int, ...]
    t: int

    @property
    def full_row(self) -> int:
        return (1 << self.d) - 1

    def mask_rows(self) -> tuple[int, ...]:
        """M = A or H^T, as bit rows."""
        return tuple(a | ht for a, ht in zip(self.adj, self.closure_t))

    def identifying_rows(self) -> tuple[int, ...]:
        """Q = H or H^T, as bit rows."""
        return tuple(h | ht for h, ht in zip(self.closure, self.closure_t))

    @property
    def A(self) -> np.ndarray:
        return bitrows_to_array(self.adj, self.d)

    @property
    def H(self) -> np.ndarray:
        return bitrows_to_array(self.closure, self.d)

    @property
    def M(self) -> np.ndarray:
        return bitrows_to_array(self.mask_rows(), self.d)

    @property
    def Q(self) -> np.ndarray:
        return bitrows_to_array(self.identifying_rows(), self.d)

    def edges(self) -> list[EdgeAction]:
        return [EdgeAction(j, i) for i, row in enumerate(self.adj) for j in iter_bits(row)]


def iter_bits(row: int) -> Iterator[int]:
    """Yields the indices of the set bits of row in increasing order."""
    while row:
        low = row & -row
        yield low.bit_length() - 1
        row ^= low


def bitrows_to_array(rows: tuple[int, ...] | list[int], d: int) -> np.ndarray:
    if d <= 62:
        packed = np.asarray(rows, dtype=np.int64)
        return ((packed[:, None] >> np.arange(d, dtype=np.int64)) & 1).astype(np.uint8)
    return np.array([[(row >> j) & 1 for j in range(d)] for row in rows], dtype=np.uint8)


def array_to_bitrows(matrix: np.ndarray) -> tuple[int, ...]:
    matrix = np.asarray(matrix)
    return tuple(sum(1 << int(j) for j in np.flatnonzero(row)) for row in matrix)


def new_state(d: int) -> BuilderState:
    """The empty graph s0: A = 0 and H = M = Q = I."""
    if d < 2:
        raise InvalidDimensionError(f"Node count must be at least 2, got {d}.")
    identity = tuple(1 << i for i in range(d))
    return BuilderState(d=d, adj=(0,) * d, closure=identity, closure_t=identity, t=0)


def allowed_actions(s: BuilderState) -> frozenset[EdgeAction]:
    """All edge additions keeping A acyclic and free of duplicates."""
    full = s.full_row
    return frozenset(
        EdgeAction(j, i)
        for i, m in enumerate(s.mask_rows())
        for j in iter_bits(~m & full)
    )


def path_endpoints(s: BuilderState) -> tuple[int, int | None]:
    """Bitset of visited nodes and the tail node of a PATH-case state."""
    has_child = 0
    has_parent = 0
    for i, row in enumerate(s.adj):
        has_child |= row
        if row:
            has_parent |= 1 << i
    visited = has_child | has_parent
    tail_bits = visited & ~has_child
    tail = tail_bits.bit_length() - 1 if tail_bits else None
    return visited, tail


def allowed_actions_for_case(s: BuilderState, case: SamplingCase | int) -> list[EdgeAction]:
    """Allowed actions under the regime of `case`, ordered by action index."""
    if SamplingCase(case) is SamplingCase.PATH and s.t > 0:
        visited, tail = path_endpoints(s)
        free = ~visited & s.full_row
        return sorted((EdgeAction(tail, u) for u in iter_bits(free)), key=lambda a: a.index(s.d))
    return sorted(allowed_actions(s), key=lambda a: a.index(s.d))


def forbidden_mask(s: BuilderState, case: SamplingCase | int = SamplingCase.IDENTIFY) -> np.ndarray:
    """Flat boolean mask over the d*d action indices, True where forbidden."""
    d = s.d
    full = s.full_row
    if SamplingCase(case) is SamplingCase.PATH and s.t > 0:
        visited, tail = path_endpoints(s)
        allowed = np.zeros((d, d), dtype=bool)
        allowed[list(iter_bits(~visited & full)), tail] = True
    else:
        allowed = bitrows_to_array(tuple(~m & full for m in s.mask_rows()), d).astype(bool)
    return ~allowed.reshape(-1)


def apply_action(s: BuilderState, a: EdgeAction) -> BuilderState:
    """Adds a.source -> a.target and updates the closure incrementally.

    Every node reachable from the target (column `target` of H) inherits the
    ancestors of the source (row `source` of H).
    """
    d = s.d
    if not (0 <= a.source < d and 0 <= a.target < d) or a.source == a.target:
        raise ForbiddenActionError(f"Action {a.source}->{a.target} is out of range for d={d}.")
    i, j = a.target, a.source
    if (s.adj[i] | s.closure_t[i]) >> j & 1:
        raise ForbiddenActionError(f"Action {j}->{i} is masked (duplicate edge or cycle).")

    adj = list(s.adj)
    adj[i] |= 1 << j
    closure = list(s.closure)
    closure_t = list(s.closure_t)
    ancestors = s.closure[j]
    descendants = s.closure_t[i]
    for x in iter_bits(descendants):
        closure[x] |= ancestors
    for y in iter_bits(ancestors):
        closure_t[y] |= descendants
    return BuilderState(d=d, adj=tuple(adj), closure=tuple(closure), closure_t=tuple(closure_t), t=s.t + 1)


def state_from_adjacency(A: np.ndarray | tuple[int, ...], d: int | None = None) -> BuilderState:
    """Rebuilds a state from scratch by replaying the edges of A."""
    rows = A if isinstance(A, tuple) else array_to_bitrows(A)
    d = len(rows) if d is None else d
    s = new_state(d)
    for i, row in enumerate(rows):
        for j in iter_bits(row):
            try:
                s = apply_action(s, EdgeAction(j, i))
            except ForbiddenActionError as e:
                raise InvalidGraphError(f"Adjacency is not a DAG: {e}") from e
    return s


def is_identified(s: BuilderState) -> bool:
    """True once every pair of nodes is ordered by reachability (Q has no zero).

    From then on the topological sort of s can no longer change.

    Args:
        s: Any reachable state.
    """
    full = s.full_row
    return all(q == full for q in s.identifying_rows())


def is_terminal(s: BuilderState, case: SamplingCase | int) -> bool:
    """Stopping rule of `case`: all d(d-1)/2 edges for FULL, identification otherwise.

    Args:
        s: State to test.
        case: Sampling regime, a SamplingCase or its integer value.
    """
    if SamplingCase(case) is SamplingCase.FULL:
        return s.t == s.d * (s.d - 1) // 2
    return is_identified(s)


def induced_full_dag(s: BuilderState) -> np.ndarray:
    """H - I of an identified state: the complete DAG of its topological sort."""
    if not is_identified(s):
        raise NotIdentifiedError("Topological sort is not identified yet.")
    return s.H - np.eye(s.d, dtype=np.uint8)


def topological_sort(s: BuilderState) -> list[int]:
    """Nodes ordered by ancestor count (row sums of H)."""
    if not is_identified(s):
        raise NotIdentifiedError("Topological sort is not identified yet.")
    return sorted(range(s.d), key=lambda i: s.closure[i].bit_count())


def _remove_edge(s: BuilderState, action: EdgeAction) -> BuilderState:
    rows = list(s.adj)
    rows[action.target] &= ~(1 << action.source)
    return state_from_adjacency(tuple(rows), s.d)


def enumerate_parents(s: BuilderState, case: SamplingCase | int) -> list[tuple[BuilderState, EdgeAction]]:
    """All (parent, action) pairs with apply_action(parent, action) == s under `case`."""
    if s.t == 0:
        return []
    case = SamplingCase(case)
    if case is SamplingCase.PATH:
        _, tail = path_endpoints(s)
        source = s.adj[tail].bit_length() - 1
        action = EdgeAction(source, tail)
        return [(_remove_edge(s, action), action)]

    parents = []
    for action in s.edges():
        parent = _remove_edge(s, action)
        if case is SamplingCase.IDENTIFY and is_identified(parent):
            continue
        parents.append((parent, action))
    return parents


def sample_uniform_action(s: BuilderState, case: SamplingCase | int, rng: np.random.Generator) -> EdgeAction:
    """Draws one allowed action uniformly without listing the action set."""
    d = s.d
    if SamplingCase(case) is SamplingCase.PATH and s.t > 0:
        visited, tail = path_endpoints(s)
        free = list(iter_bits(~visited & s.full_row))
        return EdgeAction(tail, free[int(rng.integers(len(free)))])

    full = s.full_row
    open_rows = [~m & full for m in s.mask_rows()]
    counts = [row.bit_count() for row in open_rows]
    k = int(rng.integers(sum(counts)))
    for i, (row, count) in enumerate(zip(open_rows, counts)):
        if k < count:
            for j in iter_bits(row):
                if k == 0:
                    return EdgeAction(j, i)
                k -= 1
        k -= count
    raise AssertionError("unreachable: action count mismatch")


def check_invariants(s: BuilderState) -> None:
    """Verifies the closure against a dense matrix-power recomputation.

    Also checks the mask M = A or H^T, the identifying matrix Q = H or H^T and
    that is_identified() agrees with Q. Raises AssertionError on the first
    violation.
    """
    A = s.A.astype(np.int64)
    reach = np.eye(s.d, dtype=np.int64)
    while True:
        grown = ((reach + A @ reach) > 0).astype(np.int64)
        if np.array_equal(grown, reach):
            break
        reach = grown
    if not np.array_equal(reach.astype(np.uint8), s.H):
        raise AssertionError("closure H diverged from the reachability of A")
    Q = s.Q
    if not np.array_equal(Q, (s.H | s.H.T)):
        raise AssertionError("identifying matrix Q != H or H^T")
    if is_identified(s) != bool(Q.all()):
        raise AssertionError("is_identified disagrees with Q")
    if not np.array_equal(s.M, (s.A | s.H.T)):
        raise AssertionError("mask M != A or H^T")
    if int(s.A.sum()) != s.t or np.any(np.diag(s.A)):
        raise AssertionError("edge counter or diagonal of A is inconsistent")
