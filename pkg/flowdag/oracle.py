"""
Brute-force reference implementations for cross-checking.

These work on plain nested lists and edge sets, independently of the
bit-packed code in graph_state. Nothing in the training or sampling path
imports this module.
"""

from __future__ import annotations

from collections import defaultdict
from typing import NamedTuple

from flowdag.errors import TooLargeError

Edge = tuple[int, int]  # (source, target), i.e. A[target][source] = 1


def reachability_floyd_warshall(A) -> list[list[int]]:
    """R[i][j] = 1 iff i is reachable from j (diagonal included)."""
    d = len(A)
    R = [[1 if i == j or A[i][j] else 0 for j in range(d)] for i in range(d)]
    for k in range(d):
        for i in range(d):
            if R[i][k]:
                for j in range(d):
                    if R[k][j]:
                        R[i][j] = 1
    return R


def has_cycle(A) -> bool:
    """Three-colour depth-first search over edges j -> i where A[i][j] = 1."""
    d = len(A)
    children = [[i for i in range(d) if A[i][j]] for j in range(d)]
    WHITE, GREY, BLACK = 0, 1, 2
    colour = [WHITE] * d

    def visit(u: int) -> bool:
        colour[u] = GREY
        for v in children[u]:
            if colour[v] == GREY:
                return True
            if colour[v] == WHITE and visit(v):
                return True
        colour[u] = BLACK
        return False

    return any(colour[u] == WHITE and visit(u) for u in range(d))


def edges_to_matrix(edges, d: int) -> list[list[int]]:
    A = [[0] * d for _ in range(d)]
    for source, target in edges:
        A[target][source] = 1
    return A


def is_comparable_everywhere(A) -> bool:
    """Every node pair is ordered by reachability."""
    R = reachability_floyd_warshall(A)
    d = len(A)
    return all(R[i][j] or R[j][i] for i in range(d) for j in range(d))


def _path_moves(edges: frozenset[Edge], d: int) -> list[Edge]:
    if not edges:
        return [(j, i) for i in range(d) for j in range(d) if i != j]
    sources = {s for s, _ in edges}
    visited = sources | {t for _, t in edges}
    (tail,) = visited - sources
    return [(tail, u) for u in range(d) if u not in visited]


def _dag_moves(edges: frozenset[Edge], d: int) -> list[Edge]:
    moves = []
    for i in range(d):
        for j in range(d):
            if i == j or (j, i) in edges:
                continue
            if not has_cycle(edges_to_matrix(edges | {(j, i)}, d)):
                moves.append((j, i))
    return moves


def legal_moves(edges: frozenset[Edge], d: int, case: int) -> list[Edge]:
    return _path_moves(edges, d) if int(case) == 3 else _dag_moves(edges, d)


def is_terminal(edges: frozenset[Edge], d: int, case: int) -> bool:
    if int(case) == 1:
        return len(edges) == d * (d - 1) // 2
    return is_comparable_everywhere(edges_to_matrix(edges, d))


class TerminalEnumeration(NamedTuple):
    terminals: dict[frozenset[Edge], int]
    states: set[frozenset[Edge]]


def enumerate_terminal_states(d: int, case: int) -> TerminalEnumeration:
    """Breadth-first expansion of the state space with trajectory counts."""
    if d > 4:
        raise TooLargeError(f"Exhaustive enumeration is limited to d <= 4, got {d}.")
    root: frozenset[Edge] = frozenset()
    counts: dict[frozenset[Edge], int] = defaultdict(int)
    counts[root] = 1
    states = {root}
    frontier = [root]
    terminals: dict[frozenset[Edge], int] = {}
    while frontier:
        layer: dict[frozenset[Edge], None] = {}
        for edges in frontier:
            if is_terminal(edges, d, case):
                terminals[edges] = counts[edges]
                continue
            for move in legal_moves(edges, d, case):
                child = edges | {move}
                counts[child] += counts[edges]
                layer.setdefault(child)
        frontier = sorted(layer, key=sorted)
        states.update(frontier)
    return TerminalEnumeration(terminals=terminals, states=states)
