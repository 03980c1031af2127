"""
Trajectory sampling and flow-matching training.

A trajectory starts from the empty graph and adds one edge per step under the
acyclicity mask until the sampling case's stopping rule fires. The flow
network is trained so that, at every visited state, the summed inflow from
its parents equals its outflow, or its reward when terminal.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
from mcp.server.fastmcp.utilities.logging import get_logger
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import logsumexp

from flowdag.errors import ShapeError, TrainingDivergenceError
from flowdag.flow_net import (
    FeatureKind,
    FlowNet,
    OptState,
    adam_step,
    backward,
    featurize,
    forward_batch,
    init_flow_net,
    init_opt_state,
    masked_distribution,
    save_checkpoint,
)
from flowdag.graph_state import (
    BuilderState,
    EdgeAction,
    SamplingCase,
    allowed_actions_for_case,
    apply_action,
    check_invariants,
    enumerate_parents,
    forbidden_mask,
    induced_full_dag,
    is_terminal,
    new_state,
    sample_uniform_action,
)
from flowdag.postprocess import compare, prune
from flowdag.rewards import RewardConfig, log_reward
from flowdag.synthetic import Dataset

logger = get_logger(__name__)

LogRewardFn = Callable[[BuilderState], float]


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    d: int = Field(ge=2)
    batch_size: int = Field(default=64, ge=1)
    epochs: int = Field(default=5000, ge=0)
    lr: float = Field(default=1e-4, gt=0)
    case: SamplingCase = SamplingCase.IDENTIFY
    reward: RewardConfig = RewardConfig()
    seed: int = 0
    loss_space: Literal["log", "raw"] = "log"
    epsilon: float = Field(default=1e-8, ge=0)
    hidden_width: int = Field(default=256, ge=1)
    features: FeatureKind = "adjacency"
    uniform_epochs: int = Field(default=500, ge=0)
    exploration: float = Field(default=0.05, ge=0, le=1)
    prune_method: Literal["threshold", "lasso"] = "threshold"
    prune_param: float = Field(default=0.3, ge=0)
    workers: int = Field(default=1, ge=1)
    checkpoint_every: int = Field(default=0, ge=0)
    log_every: int = Field(default=100, ge=1)
    check_invariants: bool = True
    tpr_threshold: float = Field(default=0.6, ge=0, le=1)


@dataclass
class Trajectory:
    steps: list[tuple[BuilderState, EdgeAction]]
    terminal: BuilderState
    log_reward: float
    case: SamplingCase

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def reward(self) -> float:
        return math.exp(self.log_reward)

    def states(self) -> list[BuilderState]:
        return [s for s, _ in self.steps] + [self.terminal]


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    best_reward: float
    mean_traj_len: float
    wall_ms: float
    high_tpr_count: int | None = None


@dataclass
class BestGraph:
    log_reward: float
    terminal: BuilderState
    full_dag: np.ndarray
    pruned: np.ndarray

    @property
    def reward(self) -> float:
        return math.exp(self.log_reward)


@dataclass
class TrainResult:
    net: FlowNet
    opt: OptState
    best: BestGraph | None
    log: list[EpochRecord] = field(default_factory=list)


@dataclass
class FlowTerm:
    """Flow-matching equation for one visited non-initial state."""

    state: BuilderState
    parents: list[tuple[BuilderState, int]]
    outflow_actions: list[int]
    log_reward: float | None


@dataclass
class LossResult:
    loss: float
    grads: list[np.ndarray]
    n_terms: int


def dataset_log_reward(X: Dataset, cfg: RewardConfig) -> LogRewardFn:
    """Memoised log-reward keyed on the closure H.

    The reward depends on the induced full DAG H - I only, so states sharing a
    closure share one evaluation.
    """
    cache: dict[tuple[int, ...], float] = {}

    def fn(s: BuilderState) -> float:
        key = s.closure
        if key not in cache:
            cache[key] = log_reward(s, X, cfg)
        return cache[key]

    return fn


def _policy_actions(net: FlowNet, states: list[BuilderState], case: SamplingCase, explore: float,
                    rngs: list[np.random.Generator]) -> list[EdgeAction]:
    forbidden = np.stack([forbidden_mask(s, case) for s in states])
    out, _ = forward_batch(net, featurize(states, net.features))
    dist = masked_distribution(out, forbidden).with_exploration(explore)
    uniforms = np.array([rng.random() for rng in rngs])
    return [EdgeAction.from_index(int(i), net.d) for i in dist.draw(uniforms)]


def sample_trajectories(net: FlowNet | None, cfg: TrainConfig, seeds: Sequence,
                        log_reward_fn: LogRewardFn | None = None, explore: float = 0.0) -> list[Trajectory]:
    """Samples one trajectory per seed, advancing every unfinished one in lockstep.

    Each step evaluates the network once over all unfinished states. `net=None`
    or explore=1 is the uniform policy.
    """
    if net is not None and net.d != cfg.d:
        raise ShapeError(f"Network built for d={net.d}, config has d={cfg.d}.")
    case = SamplingCase(cfg.case)
    rngs = [np.random.default_rng(seed) for seed in seeds]
    states = [new_state(cfg.d) for _ in rngs]
    steps: list[list[tuple[BuilderState, EdgeAction]]] = [[] for _ in rngs]
    uniform = net is None or explore >= 1.0
    active = list(range(len(states)))
    while active:
        if uniform:
            actions = [sample_uniform_action(states[k], case, rngs[k]) for k in active]
        else:
            actions = _policy_actions(net, [states[k] for k in active], case, explore, [rngs[k] for k in active])
        for k, action in zip(active, actions):
            steps[k].append((states[k], action))
            states[k] = apply_action(states[k], action)
        active = [k for k in active if not is_terminal(states[k], case)]
    return [
        Trajectory(steps=path, terminal=s, log_reward=log_reward_fn(s) if log_reward_fn is not None else 0.0,
                   case=case)
        for path, s in zip(steps, states)
    ]


def sample_trajectory(net: FlowNet | None, cfg: TrainConfig, seed, log_reward_fn: LogRewardFn | None = None,
                      explore: float = 0.0) -> Trajectory:
    """Samples one complete trajectory; `net=None` or explore=1 is the uniform policy."""
    return sample_trajectories(net, cfg, [seed], log_reward_fn, explore)[0]


def flow_match_terms(batch: Sequence[Trajectory], case: SamplingCase | int) -> list[FlowTerm]:
    case = SamplingCase(case)
    parent_cache: dict[tuple[int, ...], list[tuple[BuilderState, int]]] = {}
    terms = []
    for traj in batch:
        states = traj.states()
        for t, s in enumerate(states[1:], start=1):
            if s.adj not in parent_cache:
                parent_cache[s.adj] = [(p, a.index(s.d)) for p, a in enumerate_parents(s, case)]
            terminal = t == len(states) - 1
            terms.append(FlowTerm(
                state=s,
                parents=parent_cache[s.adj],
                outflow_actions=[] if terminal else [a.index(s.d) for a in allowed_actions_for_case(s, case)],
                log_reward=traj.log_reward if terminal else None,
            ))
    return terms


def _padded(rows: list[list[int]], cols: list[list[int]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    width = max(len(c) for c in cols)
    row_idx = np.zeros((len(cols), width), dtype=np.int64)
    col_idx = np.zeros((len(cols), width), dtype=np.int64)
    mask = np.zeros((len(cols), width), dtype=bool)
    for k, (r, c) in enumerate(zip(rows, cols)):
        row_idx[k, :len(c)] = r
        col_idx[k, :len(c)] = c
        mask[k, :len(c)] = True
    return row_idx, col_idx, mask


def evaluate_flow_match(log_flows_fn: Callable[[list[BuilderState]], np.ndarray],
                        batch: Sequence[Trajectory], cfg: TrainConfig) -> tuple[float, np.ndarray, list[BuilderState]]:
    """Mean squared flow mismatch and its gradient w.r.t. every log-flow output.

    `log_flows_fn` maps a list of states to an (N, d*d) array of log-flows;
    the returned gradient has the same shape, rows aligned with the returned
    state list. All terms are evaluated at once on padded index matrices.
    """
    if not batch:
        raise ShapeError("Flow-matching loss needs a non-empty batch.")
    terms = flow_match_terms(batch, cfg.case)
    index: dict[tuple[int, ...], int] = {}
    states: list[BuilderState] = []

    def slot(s: BuilderState) -> int:
        if s.adj not in index:
            index[s.adj] = len(states)
            states.append(s)
        return index[s.adj]

    in_rows, in_cols, in_mask = _padded([[slot(p) for p, _ in t.parents] for t in terms],
                                        [[a for _, a in t.parents] for t in terms])
    inner = [k for k, t in enumerate(terms) if t.log_reward is None]
    out = np.asarray(log_flows_fn(states), dtype=np.float64)
    grad = np.zeros_like(out)

    in_vals = np.where(in_mask, out[in_rows, in_cols], -np.inf)
    log_in = logsumexp(in_vals, axis=1)
    log_target = np.array([-np.inf if t.log_reward is None else t.log_reward for t in terms], dtype=np.float64)
    if inner:
        out_rows, out_cols, out_mask = _padded([[slot(terms[k].state)] * len(terms[k].outflow_actions) for k in inner],
                                               [terms[k].outflow_actions for k in inner])
        out_vals = np.where(out_mask, out[out_rows, out_cols], -np.inf)
        log_target[inner] = logsumexp(out_vals, axis=1)

    if cfg.loss_space == "log":
        log_eps = math.log(cfg.epsilon) if cfg.epsilon > 0 else -math.inf
        g_in = np.logaddexp(log_eps, log_in)
        g_out = np.logaddexp(log_eps, log_target)
        diff = g_in - g_out
        d_in = np.exp(in_vals - g_in[:, None])
        d_out = np.exp(out_vals - g_out[inner][:, None]) if inner else None
    else:
        diff = np.exp(log_in) - np.exp(log_target)
        d_in = np.exp(in_vals)
        d_out = np.exp(out_vals) if inner else None

    scale = 2.0 / len(terms)
    np.add.at(grad, (in_rows[in_mask], in_cols[in_mask]), (scale * diff[:, None] * d_in)[in_mask])
    if d_out is not None:
        np.add.at(grad, (out_rows[out_mask], out_cols[out_mask]), (-scale * diff[inner][:, None] * d_out)[out_mask])
    return float(np.mean(diff * diff)), grad, states


def flow_match_loss(net: FlowNet, batch: Sequence[Trajectory], cfg: TrainConfig, step: int = 0) -> LossResult:
    caches = {}

    def log_flows(states: list[BuilderState]) -> np.ndarray:
        out, caches["fwd"] = forward_batch(net, featurize(states, net.features))
        return out

    loss, grad_out, _ = evaluate_flow_match(log_flows, batch, cfg)
    if not math.isfinite(loss):
        raise TrainingDivergenceError("Non-finite flow-matching loss", step=step)
    n_terms = sum(t.length for t in batch)
    return LossResult(loss=loss, grads=backward(net, caches["fwd"], grad_out), n_terms=n_terms)


def checkpoint_extra(cfg: TrainConfig) -> dict:
    return {"train_config": cfg.model_dump(mode="json")}


def _sample_batch(net: FlowNet | None, cfg: TrainConfig, seeds: Sequence, log_reward_fn: LogRewardFn | None,
                  explore: float, workers: int) -> list[Trajectory]:
    """Samples the batch, then scores the terminal states on `workers` threads.

    Uniform-policy batches are also split across the workers; on-policy
    batches stay in one lockstep pass so the network sees the same rows
    whatever the worker count.
    """
    if workers <= 1:
        return sample_trajectories(net, cfg, seeds, log_reward_fn, explore)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        if net is None or explore >= 1.0:
            chunks = [list(c) for c in np.array_split(np.arange(len(seeds)), workers) if c.size]
            parts = pool.map(lambda c: sample_trajectories(None, cfg, [seeds[i] for i in c]), chunks)
            batch = [traj for part in parts for traj in part]
        else:
            batch = sample_trajectories(net, cfg, seeds, None, explore)
        if log_reward_fn is not None:
            for traj, value in zip(batch, pool.map(lambda t: log_reward_fn(t.terminal), batch)):
                traj.log_reward = value
    return batch


def _prune_full(full: np.ndarray, X: Dataset | None, cfg: TrainConfig) -> np.ndarray:
    if X is None:
        return full
    return prune(full, X, cfg.prune_method, cfg.prune_param).graph


def train(cfg: TrainConfig, X: Dataset | None, log_reward_fn: LogRewardFn | None = None,
          truth: np.ndarray | None = None, output_dir: Path | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Runs cfg.epochs iterations of sample / flow-matching loss / Adam.

    The best terminal reward seen so far is tracked, and its full DAG is
    pruned whenever it improves. `log_reward_fn` overrides the dataset reward.
    """
    if X is not None and X.d != cfg.d:
        raise ShapeError(f"Dataset has {X.d} columns, config expects d={cfg.d}.")
    if log_reward_fn is None:
        if X is None:
            raise ShapeError("Training needs a dataset or an explicit reward function.")
        log_reward_fn = dataset_log_reward(X, cfg.reward)

    net = init_flow_net(cfg.d, cfg.hidden_width, cfg.features, seed=cfg.seed)
    opt = init_opt_state(net, lr=cfg.lr)
    result = TrainResult(net=net, opt=opt, best=None)
    ckpt_dir = Path(output_dir) / "checkpoints" if output_dir is not None else None

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        explore = 1.0 if epoch < cfg.uniform_epochs else cfg.exploration
        seeds = np.random.SeedSequence([cfg.seed, epoch]).spawn(cfg.batch_size)
        batch = _sample_batch(result.net, cfg, seeds, log_reward_fn, explore, cfg.workers)
        if cfg.check_invariants:
            for s in batch[0].states():
                check_invariants(s)

        try:
            loss = flow_match_loss(result.net, batch, cfg, step=result.opt.step + 1)
            result.net, result.opt = adam_step(result.net, loss.grads, result.opt)
        except TrainingDivergenceError:
            logger.error("Training diverged at epoch %d", epoch)
            if ckpt_dir is not None:
                save_checkpoint(result.net, result.opt, ckpt_dir / "last_finite", extra=checkpoint_extra(cfg))
            raise

        for traj in batch:
            if result.best is None or traj.log_reward > result.best.log_reward:
                full = induced_full_dag(traj.terminal)
                result.best = BestGraph(traj.log_reward, traj.terminal, full, _prune_full(full, X, cfg))

        high_tpr = None
        if truth is not None:
            high_tpr = sum(
                compare(_prune_full(induced_full_dag(t.terminal), X, cfg), truth).tpr > cfg.tpr_threshold
                for t in batch
            )
        record = EpochRecord(
            epoch=epoch,
            mean_loss=loss.loss,
            best_reward=result.best.reward,
            mean_traj_len=float(np.mean([t.length for t in batch])),
            wall_ms=(time.perf_counter() - started) * 1000.0,
            high_tpr_count=high_tpr,
        )
        result.log.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if epoch % cfg.log_every == 0 or epoch == cfg.epochs - 1:
            logger.info("epoch=%d loss=%.6g best_reward=%.6g mean_len=%.2f",
                        epoch, record.mean_loss, record.best_reward, record.mean_traj_len)
        if ckpt_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(result.net, result.opt, ckpt_dir / f"epoch_{epoch + 1:06d}", extra=checkpoint_extra(cfg))

    return result


@dataclass
class ResampleResult:
    trajectories: list[Trajectory]
    full_dags: list[np.ndarray]
    n_distinct: int
    n_above_threshold: int
    mean_sample_seconds: float
    n_high_tpr: int | None = None

    @property
    def rewards(self) -> list[float]:
        return [t.reward for t in self.trajectories]


def resample(net: FlowNet, n: int, cfg: TrainConfig, X: Dataset | None = None,
             log_reward_fn: LogRewardFn | None = None, reward_threshold: float = 0.0,
             seed: int | None = None, truth: np.ndarray | None = None) -> ResampleResult:
    """Draws n trajectories from the trained policy without updating it.

    Args:
        net: Trained flow network.
        n: Number of trajectories.
        cfg: Training configuration; supplies d, the case and the pruning rule.
        X: Dataset for the reward and for pruning. Optional.
        log_reward_fn: Overrides the dataset reward.
        reward_threshold: n_above_threshold counts distinct terminal graphs
            whose reward exceeds this value.
        seed: Sampling seed, cfg.seed when omitted.
        truth: Ground-truth adjacency. When given, n_high_tpr counts distinct
            sampled graphs whose pruned DAG has TPR above cfg.tpr_threshold.
    """
    if log_reward_fn is None and X is not None:
        log_reward_fn = dataset_log_reward(X, cfg.reward)
    seeds = np.random.SeedSequence([cfg.seed if seed is None else seed, 1 << 20]).spawn(n)
    started = time.perf_counter()
    trajectories = _sample_batch(net, cfg, seeds, log_reward_fn, 0.0, cfg.workers)
    elapsed = time.perf_counter() - started
    distinct = {t.terminal.adj: t for t in trajectories}
    n_high_tpr = None
    if truth is not None:
        n_high_tpr = sum(
            compare(_prune_full(induced_full_dag(t.terminal), X, cfg), truth).tpr > cfg.tpr_threshold
            for t in distinct.values()
        )
    return ResampleResult(
        trajectories=trajectories,
        full_dags=[induced_full_dag(t.terminal) for t in trajectories],
        n_distinct=len(distinct),
        n_above_threshold=sum(t.reward > reward_threshold for t in distinct.values()),
        mean_sample_seconds=elapsed / n if n else 0.0,
        n_high_tpr=n_high_tpr,
    )


@dataclass
class CaseTiming:
    case: SamplingCase
    total_seconds: float
    mean_length: float


def bench_cases(d: int, n_graphs: int, seed: int = 0) -> list[CaseTiming]:
    """Uniform-policy sampling cost of each case over n_graphs trajectories."""
    rows = []
    for case in SamplingCase:
        cfg = TrainConfig(d=d, case=case, seed=seed)
        seeds = np.random.SeedSequence([seed, int(case)]).spawn(n_graphs)
        started = time.perf_counter()
        lengths = [t.length for t in sample_trajectories(None, cfg, seeds)]
        rows.append(CaseTiming(case=case, total_seconds=time.perf_counter() - started,
                               mean_length=float(np.mean(lengths))))
        logger.info("case %d: %.3fs, mean length %.2f", int(case), rows[-1].total_seconds, rows[-1].mean_length)
    return rows
