import numpy as np
import pytest

from flowdag.errors import InvalidDensityError, InvalidDimensionError, InvalidGraphError, InvalidParameterError
from flowdag.graph_state import state_from_adjacency
from flowdag.synthetic import (
    NoiseSpec,
    WeightedGraph,
    sample_er_graph,
    sample_sf_graph,
    sample_weights,
    simulate_sem,
    standardize_dataset,
)


class TestErGraph:
    def test_mean_edge_count(self):
        counts = [sample_er_graph(12, 2, seed).sum() for seed in range(1000)]
        assert 22 <= np.mean(counts) <= 26

    def test_acyclic(self):
        for seed in range(50):
            state_from_adjacency(sample_er_graph(10, 2, seed))

    def test_maximal_density_is_complete(self):
        # beta * d = d(d-1)/2 for d = 5, beta = 2
        for seed in range(10):
            assert sample_er_graph(5, 2, seed).sum() == 10

    def test_same_seed_same_graph(self):
        np.testing.assert_array_equal(sample_er_graph(8, 1, 3), sample_er_graph(8, 1, 3))

    def test_rejects_impossible_density(self):
        with pytest.raises(InvalidDensityError):
            sample_er_graph(4, 2, 0)
        with pytest.raises(InvalidDimensionError):
            sample_er_graph(1, 1, 0)


class TestSfGraph:
    def test_tree_for_single_attachment(self):
        A = sample_sf_graph(10, 1, 0)
        assert A.sum() == 9
        state_from_adjacency(A)

    def test_in_degree_tail_heavier_than_er(self):
        wins = 0
        for seed in range(200):
            sf = sample_sf_graph(30, 5, seed)
            er = sample_er_graph(30, sf.sum() / 30, seed + 10_000)
            sf_degree = sf.sum(axis=1).max()
            er_degree = er.sum(axis=1).max()
            wins += sf_degree > er_degree
        assert wins >= 180

    def test_rejects_bad_attachment(self):
        with pytest.raises(InvalidParameterError):
            sample_sf_graph(5, 5, 0)
        with pytest.raises(InvalidParameterError):
            sample_sf_graph(5, 0, 0)


class TestWeights:
    def test_magnitudes_and_support(self):
        A = sample_er_graph(12, 2, 1)
        g = sample_weights(A, 2)
        nonzero = np.abs(g.W[A == 1])
        assert np.all((nonzero >= 0.5) & (nonzero <= 2.0))
        assert not g.W[A == 0].any()

    def test_empty_graph_has_zero_weights(self):
        assert not sample_weights(np.zeros((4, 4), dtype=np.uint8), 0).W.any()

    def test_sign_balance(self):
        A = np.tril(np.ones((150, 150), dtype=np.uint8), k=-1)
        W = sample_weights(A, 5).W[A == 1]
        assert 0.47 <= np.mean(W < 0) <= 0.53

    def test_cyclic_input_rejected(self):
        A = np.array([[0, 1], [1, 0]], dtype=np.uint8)
        with pytest.raises(InvalidGraphError):
            sample_weights(A, 0)


class TestSem:
    def test_pure_noise_has_zero_mean(self):
        g = WeightedGraph(A_true=np.zeros((3, 3), dtype=np.uint8), W=np.zeros((3, 3)))
        X = simulate_sem(g, 10_000, NoiseSpec(), seed=0).X
        assert np.all(np.abs(X.mean(axis=0)) < 0.05)

    @pytest.mark.parametrize("kind", ["gaussian", "gumbel"])
    def test_empty_graph_columns_are_uncorrelated(self, kind):
        g = WeightedGraph(A_true=np.zeros((5, 5), dtype=np.uint8), W=np.zeros((5, 5)))
        X = simulate_sem(g, 10_000, NoiseSpec(kind, 1.0), seed=2).X
        rho = np.corrcoef(X, rowvar=False)
        assert np.abs(rho[np.triu_indices(5, k=1)]).max() < 0.05

    def test_variance_of_child(self):
        A = np.array([[0, 0], [1, 0]], dtype=np.uint8)
        g = WeightedGraph(A_true=A, W=A.astype(float))
        X = simulate_sem(g, 10_000, NoiseSpec("gaussian", 1.0), seed=1).X
        assert 1.85 <= X[:, 1].var() <= 2.15

    def test_deterministic(self, chain_graph):
        a = simulate_sem(chain_graph, 100, NoiseSpec("gumbel", 1.0), seed=4)
        b = simulate_sem(chain_graph, 100, NoiseSpec("gumbel", 1.0), seed=4)
        np.testing.assert_array_equal(a.X, b.X)
        assert a.columns == ["x1", "x2", "x3"]

    def test_noise_validation(self):
        with pytest.raises(InvalidParameterError):
            NoiseSpec("laplace", 1.0)
        with pytest.raises(InvalidParameterError):
            NoiseSpec("gaussian", 0.0)

    def test_standardize(self, chain_data):
        Z = standardize_dataset(chain_data).X
        np.testing.assert_allclose(Z.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(Z.std(axis=0), 1, atol=1e-12)
