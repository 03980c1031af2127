import numpy as np
import pytest

from flowdag.graph_state import SamplingCase, apply_action, is_terminal, new_state, sample_uniform_action
from flowdag.synthetic import Dataset, NoiseSpec, WeightedGraph, simulate_sem


def _uniform_states(d: int, case: SamplingCase, rng: np.random.Generator):
    s = new_state(d)
    states = [s]
    while not is_terminal(s, case):
        s = apply_action(s, sample_uniform_action(s, case, rng))
        states.append(s)
    return states


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def uniform_states():
    """States visited by one uniform-policy trajectory, s0 included."""
    return _uniform_states


@pytest.fixture
def chain_graph():
    # 0 -> 1 -> 2
    A = np.zeros((3, 3), dtype=np.uint8)
    A[1, 0] = 1
    A[2, 1] = 1
    W = np.zeros((3, 3))
    W[1, 0] = 1.5
    W[2, 1] = -1.0
    return WeightedGraph(A_true=A, W=W)


@pytest.fixture
def chain_data(chain_graph) -> Dataset:
    return simulate_sem(chain_graph, 2000, NoiseSpec("gaussian", 1.0), seed=7)
