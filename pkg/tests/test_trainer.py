import math

import numpy as np
import pytest

from flowdag import oracle, trainer
from flowdag.errors import ShapeError, TrainingDivergenceError
from flowdag.flow_net import FlowNet, init_flow_net
from flowdag.graph_state import (
    SamplingCase,
    allowed_actions_for_case,
    apply_action,
    check_invariants,
    enumerate_parents,
    is_terminal,
    topological_sort,
)
from flowdag.postprocess import compare
from flowdag.rewards import RewardConfig
from flowdag.synthetic import NoiseSpec, sample_er_graph, sample_weights, simulate_sem
from flowdag.trainer import (
    TrainConfig,
    bench_cases,
    evaluate_flow_match,
    flow_match_loss,
    resample,
    sample_trajectories,
    sample_trajectory,
    train,
)


def bit_reward(s):
    """A deterministic positive log-reward depending only on the terminal edges."""
    return 0.3 * sum(row.bit_count() for row in s.adj) + 0.1 * (s.adj[0] % 3)


def conserving_table(d, case, log_reward_fn):
    """Log edge flows F(s -> s') = F(s') / |parents(s')| with F(terminal) = reward."""
    flows = {}

    def flow(s):
        if s.adj not in flows:
            if is_terminal(s, case):
                flows[s.adj] = math.exp(log_reward_fn(s))
            else:
                flows[s.adj] = sum(edge_flow(s, a) for a in allowed_actions_for_case(s, case))
        return flows[s.adj]

    def edge_flow(s, a):
        child = apply_action(s, a)
        return flow(child) / len(enumerate_parents(child, case))

    def log_flows(states):
        out = np.zeros((len(states), d * d))
        for row, s in enumerate(states):
            if is_terminal(s, case):
                continue
            for a in allowed_actions_for_case(s, case):
                out[row, a.index(d)] = math.log(edge_flow(s, a))
        return out

    return log_flows


def uniform_batch(cfg, n, log_reward_fn, seed=0):
    seeds = np.random.SeedSequence(seed).spawn(n)
    return [sample_trajectory(None, cfg, s, log_reward_fn) for s in seeds]


class TestTrajectories:
    def test_two_nodes_take_one_step(self):
        cfg = TrainConfig(d=2)
        for seed in range(20):
            assert sample_trajectory(None, cfg, seed).length == 1

    @pytest.mark.parametrize("d", [5, 12])
    def test_identify_case_length_bounds(self, d):
        cfg = TrainConfig(d=d, case=SamplingCase.IDENTIFY)
        for seed in range(300):
            assert d - 1 <= sample_trajectory(None, cfg, seed).length <= d * (d - 1) // 2

    def test_path_case_length(self):
        cfg = TrainConfig(d=10, case=SamplingCase.PATH)
        assert {sample_trajectory(None, cfg, seed).length for seed in range(100)} == {9}

    def test_full_case_length(self):
        cfg = TrainConfig(d=6, case=SamplingCase.FULL)
        assert {sample_trajectory(None, cfg, seed).length for seed in range(20)} == {15}

    def test_terminal_reward_recorded(self):
        traj = sample_trajectory(None, TrainConfig(d=4), 3, bit_reward)
        assert traj.log_reward == bit_reward(traj.terminal)
        assert traj.reward == pytest.approx(math.exp(bit_reward(traj.terminal)))
        assert len(traj.states()) == traj.length + 1

    def test_lockstep_batch_matches_single_draws(self):
        cfg = TrainConfig(d=6, case=SamplingCase.IDENTIFY)
        seeds = np.random.SeedSequence(5).spawn(30)
        batch = sample_trajectories(None, cfg, seeds, bit_reward)
        single = [sample_trajectory(None, cfg, s, bit_reward) for s in seeds]
        assert [t.terminal.adj for t in batch] == [t.terminal.adj for t in single]
        assert [t.log_reward for t in batch] == [t.log_reward for t in single]

    def test_network_batch_is_legal_and_terminal(self):
        cfg = TrainConfig(d=5, hidden_width=8, case=SamplingCase.IDENTIFY)
        net = init_flow_net(5, hidden_width=8, seed=2)
        batch = sample_trajectories(net, cfg, np.random.SeedSequence(1).spawn(16), bit_reward, explore=0.2)
        assert len(batch) == 16
        for traj in batch:
            assert is_terminal(traj.terminal, SamplingCase.IDENTIFY)
            assert not oracle.has_cycle(traj.terminal.A.tolist())
            assert traj.log_reward == bit_reward(traj.terminal)

    def test_network_must_match_node_count(self):
        with pytest.raises(ShapeError):
            sample_trajectories(init_flow_net(4, hidden_width=4), TrainConfig(d=5), [0])

    def test_network_policy_stays_legal(self):
        cfg = TrainConfig(d=5, hidden_width=8)
        net = init_flow_net(5, hidden_width=8, seed=1)
        for seed in range(10):
            traj = sample_trajectory(net, cfg, seed, explore=0.05)
            assert not oracle.has_cycle(traj.terminal.A.tolist())

    @pytest.mark.slow
    @pytest.mark.parametrize("d", [5, 12])
    def test_identify_case_length_bounds_full_scale(self, d):
        cfg = TrainConfig(d=d, case=SamplingCase.IDENTIFY)
        lengths = [sample_trajectory(None, cfg, s).length for s in np.random.SeedSequence(d).spawn(10_000)]
        assert min(lengths) >= d - 1 and max(lengths) <= d * (d - 1) // 2

    @pytest.mark.slow
    @pytest.mark.parametrize("d", [10, 20])
    def test_identify_case_mean_length(self, d):
        cfg = TrainConfig(d=d, case=SamplingCase.IDENTIFY)
        lengths = [sample_trajectory(None, cfg, s).length for s in np.random.SeedSequence(d).spawn(2000)]
        mean = float(np.mean(lengths))
        # redundant edges implied by the closure are allowed too, so the mean
        # sits above the one-edge-per-undecided-pair estimate
        assert (d + 2) * (d - 1) / 4 <= mean < d * (d - 1) / 2
        if d == 20:
            assert mean == pytest.approx(137.86, rel=0.03)


class TestFlowMatchLoss:
    @pytest.mark.parametrize("case", list(SamplingCase))
    @pytest.mark.parametrize("space", ["log", "raw"])
    def test_conserving_table_has_zero_loss(self, case, space):
        cfg = TrainConfig(d=3, case=case, loss_space=space)
        batch = uniform_batch(cfg, 16, bit_reward)
        loss, grad, states = evaluate_flow_match(conserving_table(3, case, bit_reward), batch, cfg)
        assert loss <= 1e-12
        assert grad.shape == (len(states), 9)
        assert np.abs(grad).max() <= 1e-6

    def test_one_step_table(self):
        cfg = TrainConfig(d=2, loss_space="raw")
        batch = uniform_batch(cfg, 1, lambda s: math.log(2.0))

        def table(value):
            return lambda states: np.full((len(states), 4), math.log(value))

        loss, _, _ = evaluate_flow_match(table(2.0), batch, cfg)
        assert loss == pytest.approx(0.0, abs=1e-12)
        loss, _, _ = evaluate_flow_match(table(2.1), batch, cfg)
        assert loss == pytest.approx(0.01, abs=1e-9)

    def test_terminal_perturbation_is_quadratic(self):
        cfg = TrainConfig(d=3, loss_space="raw")
        table = conserving_table(3, SamplingCase.IDENTIFY, bit_reward)
        batch = uniform_batch(cfg, 1, bit_reward)
        target = batch[0].terminal.adj

        def shifted(delta):
            def fn(s):
                value = math.exp(bit_reward(s))
                return math.log(value + delta) if s.adj == target else math.log(value)

            traj = batch[0]
            return [type(traj)(traj.steps, traj.terminal, fn(traj.terminal), traj.case)]

        n_terms = batch[0].length
        for delta in (0.05, 0.1):
            loss, _, _ = evaluate_flow_match(table, shifted(delta), cfg)
            assert loss * n_terms == pytest.approx(delta ** 2, abs=1e-9)

    def test_gradient_matches_finite_differences(self):
        cfg = TrainConfig(d=3, hidden_width=5, loss_space="log")
        net = init_flow_net(3, hidden_width=5, seed=4)
        rng = np.random.default_rng(7)
        for k in (1, 3, 5):
            net.params[k] = rng.normal(scale=0.1, size=net.params[k].shape)
        batch = uniform_batch(cfg, 4, bit_reward, seed=2)
        analytic = flow_match_loss(net, batch, cfg).grads
        h = 1e-5
        got, expected = [], []
        for k, p in enumerate(net.params):
            for idx in list(np.ndindex(p.shape))[:15]:
                plus = [q.copy() for q in net.params]
                minus = [q.copy() for q in net.params]
                plus[k][idx] += h
                minus[k][idx] -= h
                f_plus = flow_match_loss(FlowNet(3, 5, plus), batch, cfg).loss
                f_minus = flow_match_loss(FlowNet(3, 5, minus), batch, cfg).loss
                got.append(analytic[k][idx])
                expected.append((f_plus - f_minus) / (2 * h))
        got, expected = np.array(got), np.array(expected)
        assert np.linalg.norm(got - expected) <= 1e-4 * np.linalg.norm(expected)

    def test_empty_batch_rejected(self):
        with pytest.raises(ShapeError):
            flow_match_loss(init_flow_net(3, hidden_width=4), [], TrainConfig(d=3))


class TestTrain:
    def test_runs_and_checkpoints(self, chain_data, chain_graph, tmp_path):
        cfg = TrainConfig(d=3, batch_size=4, epochs=6, hidden_width=8, uniform_epochs=2,
                          log_every=1, checkpoint_every=3)
        result = train(cfg, chain_data, truth=chain_graph.A_true, output_dir=tmp_path)
        assert [r.epoch for r in result.log] == list(range(6))
        assert all(r.high_tpr_count is not None for r in result.log)
        assert result.best is not None
        assert result.best.full_dag.sum() == 3
        assert result.opt.step == 6
        assert (tmp_path / "checkpoints" / "epoch_000003.json").exists()
        assert (tmp_path / "checkpoints" / "epoch_000006.bin").exists()

    def test_best_reward_is_monotone(self, chain_data):
        cfg = TrainConfig(d=3, batch_size=4, epochs=8, hidden_width=8, uniform_epochs=3)
        log = train(cfg, chain_data).log
        best = [r.best_reward for r in log]
        assert best == sorted(best)
        assert all(r.high_tpr_count is None for r in log)

    def test_worker_count_does_not_change_results(self, chain_data):
        base = dict(d=3, batch_size=6, epochs=4, hidden_width=8, uniform_epochs=1, exploration=0.1)
        one = train(TrainConfig(**base, workers=1), chain_data)
        three = train(TrainConfig(**base, workers=3), chain_data)
        assert [r.mean_loss for r in one.log] == [r.mean_loss for r in three.log]
        for a, b in zip(one.net.params, three.net.params):
            np.testing.assert_array_equal(a, b)

    def test_invariant_spot_check_runs_each_epoch(self, chain_data, monkeypatch):
        checked = []

        def spy(s):
            checked.append(s)
            check_invariants(s)

        monkeypatch.setattr(trainer, "check_invariants", spy)
        cfg = TrainConfig(d=3, batch_size=4, epochs=3, hidden_width=8, uniform_epochs=1, check_invariants=True)
        train(cfg, chain_data)
        assert sum(s.t == 0 for s in checked) == 3
        assert len(checked) >= 9

    def test_divergence_saves_last_finite(self, tmp_path):
        cfg = TrainConfig(d=3, batch_size=2, epochs=3, hidden_width=4, uniform_epochs=0)
        with pytest.raises(TrainingDivergenceError) as info:
            train(cfg, None, log_reward_fn=lambda s: math.nan, output_dir=tmp_path)
        assert info.value.step == 1
        assert (tmp_path / "checkpoints" / "last_finite.json").exists()

    def test_dataset_shape_checked(self, chain_data):
        with pytest.raises(ShapeError):
            train(TrainConfig(d=4, epochs=1), chain_data)

    def test_resample_reports_diversity(self):
        cfg = TrainConfig(d=5, hidden_width=8, case=SamplingCase.PATH)
        net = init_flow_net(5, hidden_width=8, seed=0)
        result = resample(net, 50, cfg, log_reward_fn=bit_reward, reward_threshold=math.exp(1.0))
        assert len(result.full_dags) == 50
        assert all(full.sum() == 10 for full in result.full_dags)
        assert 1 <= result.n_distinct <= 50
        good = {t.terminal.adj for t in result.trajectories if t.reward > math.exp(1.0)}
        assert result.n_above_threshold == len(good)
        assert result.n_high_tpr is None
        assert result.mean_sample_seconds > 0

    def test_resample_counts_distinct_graphs(self):
        cfg = TrainConfig(d=3, hidden_width=8, case=SamplingCase.PATH)
        net = init_flow_net(3, hidden_width=8, seed=0)
        chain = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]])
        result = resample(net, 50, cfg, log_reward_fn=bit_reward, reward_threshold=0.0, truth=chain)
        assert result.n_distinct <= 6
        assert result.n_above_threshold == result.n_distinct
        orders = {tuple(topological_sort(t.terminal)) for t in result.trajectories}
        assert result.n_high_tpr == int((0, 1, 2) in orders)

    def test_bench_cases_orders_lengths(self):
        rows = {int(r.case): r for r in bench_cases(8, 40, seed=1)}
        assert rows[3].mean_length == 7
        assert rows[1].mean_length == 28
        assert 7 <= rows[2].mean_length <= 28


@pytest.mark.slow
def test_sampling_proportional_to_reward():
    enumeration = oracle.enumerate_terminal_states(3, SamplingCase.IDENTIFY)
    terminals = sorted(enumeration.terminals, key=sorted)
    values = dict(zip(terminals, np.random.default_rng(0).uniform(1.0, 5.0, size=len(terminals))))

    def edges(s):
        return frozenset((a.source, a.target) for a in s.edges())

    def log_r(s):
        return math.log(values[edges(s)])

    cfg = TrainConfig(d=3, case=SamplingCase.IDENTIFY, batch_size=32, epochs=4000, lr=1e-3, hidden_width=64,
                      uniform_epochs=300, exploration=0.1, log_every=1000)
    result = train(cfg, None, log_reward_fn=log_r)
    samples = resample(result.net, 20_000, cfg, log_reward_fn=log_r, seed=99)
    counts = {t: 0 for t in terminals}
    for traj in samples.trajectories:
        counts[edges(traj.terminal)] += 1
    total = sum(values.values())
    tv = 0.5 * sum(abs(counts[t] / 20_000 - values[t] / total) for t in terminals)
    assert tv <= 0.05


@pytest.mark.slow
def test_bench_cases_cost_ordering():
    rows = {int(r.case): r for r in bench_cases(30, 1000, seed=0)}
    assert rows[3].total_seconds < rows[2].total_seconds < rows[1].total_seconds
    assert rows[3].mean_length == 29 < rows[2].mean_length < rows[1].mean_length == 435


@pytest.mark.slow
def test_end_to_end_recovers_er2_gumbel_graph():
    tprs, shds = [], []
    for seed in range(3):
        A = sample_er_graph(12, 2, seed)
        g = sample_weights(A, seed + 1)
        X = simulate_sem(g, 1000, NoiseSpec("gumbel", 1.0), seed + 2)
        cfg = TrainConfig(d=12, case=SamplingCase.PATH, batch_size=64, seed=seed,
                          reward=RewardConfig(kind="varsortability"), prune_method="threshold", prune_param=0.3)
        result = train(cfg, X)
        report = compare(result.best.pruned, A)
        tprs.append(report.tpr)
        shds.append(report.shd)
    assert np.mean(tprs) >= 0.9
    assert np.mean(shds) <= 3
