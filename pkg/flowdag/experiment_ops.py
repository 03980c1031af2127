"""
File-level experiment operations.

Each function reads its inputs from disk, writes its outputs under an output
directory and records itself in that directory's manifest.json. The CLI and
the MCP server are thin wrappers around these functions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from mcp.server.fastmcp.utilities.logging import get_logger

from flowdag.config import ExperimentConfig, to_train_config
from flowdag.errors import InvalidParameterError, ShapeError
from flowdag.flow_net import load_checkpoint, read_checkpoint_manifest, save_checkpoint
from flowdag.postprocess import MetricReport, auroc, compare, expected_shd, prune
from flowdag.synthetic import (
    NoiseSpec,
    sample_er_graph,
    sample_sf_graph,
    sample_weights,
    simulate_sem,
    standardize_dataset,
)
from flowdag.trainer import TrainConfig, bench_cases, checkpoint_extra, resample, train
from flowdag.utils import (
    get_output_path,
    git_describe,
    load_graph,
    read_dataset_csv,
    read_json,
    write_dataset_csv,
    write_edge_list,
    write_json,
    write_rows_csv,
)

logger = get_logger(__name__)

DATA_FILE = "data.csv"
TRUTH_FILE = "truth.txt"
SIDECAR_FILE = "data.json"
MANIFEST_FILE = "manifest.json"
TRAIN_LOG_FILE = "train_log.csv"
BEST_GRAPH_FILE = "best_graph.txt"
BEST_FULL_FILE = "best_full_dag.txt"
FINAL_CHECKPOINT = "checkpoints/final"
BENCH_FILE = "bench_cases.csv"
RESULTS_FILE = "results.csv"


@dataclass
class OpResult:
    """Paths written by an operation plus a one-line summary."""

    summary: str
    outputs: dict[str, Path]


def record_manifest(output_dir: Path, command: str, config: dict, seeds: dict, wall_seconds: float) -> Path:
    """Merges one command entry into <output_dir>/manifest.json."""
    logger.info("%s finished in %.2fs", command, wall_seconds)
    path = get_output_path(output_dir, MANIFEST_FILE)
    manifest = read_json(path) if path.exists() else {}
    manifest[command] = {
        "config": config,
        "seeds": seeds,
        "git_describe": git_describe(),
        "wall_seconds": round(wall_seconds, 3),
    }
    return write_json(path, manifest)


def resolve_input(output_dir: Path, path: Path | str) -> Path:
    """Relative inputs are looked up in the output directory first.

    A checkpoint stem counts as present when its .json manifest exists.
    """
    path = Path(path)
    if path.is_absolute():
        return path
    candidate = Path(output_dir) / path
    if candidate.exists() or candidate.with_name(candidate.name + ".json").exists():
        return candidate
    return path


def generate_dataset(cfg: ExperimentConfig, output_dir: Path) -> OpResult:
    """Samples a ground-truth graph, its weights and an observational dataset."""
    started = time.perf_counter()
    data = cfg.data
    if data.graph_type == "er":
        A = sample_er_graph(data.d, data.beta, data.seed)
    else:
        A = sample_sf_graph(data.d, int(data.beta), data.seed)
    truth = sample_weights(A, data.seed + 1)
    dataset = simulate_sem(truth, data.n, NoiseSpec(data.noise.kind, data.noise.scale), data.seed + 2)
    if data.standardize:
        dataset = standardize_dataset(dataset)

    outputs = {
        "data": write_dataset_csv(get_output_path(output_dir, DATA_FILE), dataset),
        "truth": write_edge_list(get_output_path(output_dir, TRUTH_FILE), truth.A_true, truth.W),
        "sidecar": write_json(get_output_path(output_dir, SIDECAR_FILE), {
            "d": data.d,
            "n": data.n,
            "noise": {"kind": data.noise.kind, "scale": data.noise.scale},
            "beta": data.beta,
            "graph_type": data.graph_type,
            "seed": data.seed,
            "standardize": data.standardize,
        }),
    }
    record_manifest(output_dir, "gen-data", cfg.model_dump(mode="json", by_alias=True),
                    {"data": data.seed}, time.perf_counter() - started)
    n_edges = int(A.sum())
    return OpResult(f"Generated {data.graph_type.upper()} graph with {n_edges} edges and {data.n}x{data.d} samples.",
                    outputs)


def run_training(cfg: ExperimentConfig, output_dir: Path, workers: int = 1) -> OpResult:
    """Trains on <output_dir>/data.csv and writes log, checkpoints and best graph."""
    output_dir = Path(output_dir)
    started = time.perf_counter()
    dataset = read_dataset_csv(resolve_input(output_dir, DATA_FILE))
    truth_path = output_dir / TRUTH_FILE
    truth = load_graph(truth_path) if truth_path.exists() else None
    train_cfg = to_train_config(cfg, workers=workers)
    if dataset.d != train_cfg.d:
        raise ShapeError(f"Dataset has {dataset.d} columns, config data.d is {train_cfg.d}.")

    result = train(train_cfg, dataset, truth=truth, output_dir=output_dir)

    header = ["epoch", "mean_loss", "best_reward", "mean_traj_len", "wall_ms"]
    if truth is not None:
        header.append("high_tpr_count")
    rows = []
    for rec in result.log:
        row = [rec.epoch, repr(rec.mean_loss), repr(rec.best_reward), repr(rec.mean_traj_len), f"{rec.wall_ms:.3f}"]
        if truth is not None:
            row.append(rec.high_tpr_count)
        rows.append(row)
    outputs = {"log": write_rows_csv(get_output_path(output_dir, TRAIN_LOG_FILE), header, rows)}
    ckpt_json, _ = save_checkpoint(result.net, result.opt, get_output_path(output_dir, FINAL_CHECKPOINT),
                                   extra=checkpoint_extra(train_cfg))
    outputs["checkpoint"] = ckpt_json

    summary = f"Trained {train_cfg.epochs} epochs."
    if result.best is not None:
        weights = prune(result.best.full_dag, dataset, train_cfg.prune_method, train_cfg.prune_param).weights
        outputs["best_graph"] = write_edge_list(get_output_path(output_dir, BEST_GRAPH_FILE), result.best.pruned,
                                                weights)
        outputs["best_full_dag"] = write_edge_list(get_output_path(output_dir, BEST_FULL_FILE), result.best.full_dag)
        summary += f" Best reward {result.best.reward:.6g}, pruned graph has {int(result.best.pruned.sum())} edges."
        if truth is not None:
            report = compare(result.best.pruned, truth)
            outputs["best_metrics"] = write_json(get_output_path(output_dir, "best_metrics.json"), report.model_dump())
            summary += f" TPR={report.tpr:.3f} SHD={report.shd}."

    record_manifest(output_dir, "train", cfg.model_dump(mode="json", by_alias=True),
                    {"data": cfg.data.seed, "train": cfg.train.seed, "workers": workers},
                    time.perf_counter() - started)
    return OpResult(summary, outputs)


def _histogram_rows(rewards: list[float], bins: int = 20) -> list[list]:
    if not rewards:
        return []
    counts, edges = np.histogram(np.asarray(rewards), bins=bins)
    return [[repr(float(lo)), repr(float(hi)), int(c)] for lo, hi, c in zip(edges[:-1], edges[1:], counts)]


def sample_graphs(checkpoint: Path | str, n: int, output_dir: Path, data_path: Path | str | None = None,
                  reward_threshold: float = 0.0, seed: int | None = None, workers: int = 1) -> OpResult:
    """Draws n graphs from a trained policy and writes them with their rewards."""
    output_dir = Path(output_dir)
    if n < 0:
        raise InvalidParameterError(f"Sample count must be non-negative, got {n}.")
    started = time.perf_counter()
    checkpoint = resolve_input(output_dir, checkpoint)
    manifest = read_checkpoint_manifest(checkpoint)
    net, _ = load_checkpoint(checkpoint)
    stored = manifest.get("extra", {}).get("train_config") or {"d": net.d}
    train_cfg = TrainConfig.model_validate({**stored, "workers": workers})

    if data_path is None and (output_dir / DATA_FILE).exists():
        data_path = output_dir / DATA_FILE
    dataset = read_dataset_csv(resolve_input(output_dir, data_path)) if data_path is not None else None
    truth_path = output_dir / TRUTH_FILE
    truth = load_graph(truth_path) if truth_path.exists() else None

    result = resample(net, n, train_cfg, X=dataset, reward_threshold=reward_threshold, seed=seed, truth=truth)
    samples_dir = output_dir / "samples"
    samples_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, (traj, full) in enumerate(zip(result.trajectories, result.full_dags)):
        graph = full if dataset is None else prune(full, dataset, train_cfg.prune_method, train_cfg.prune_param).graph
        write_edge_list(samples_dir / f"graph_{k:05d}.txt", graph)
        rows.append([k, repr(traj.reward), traj.length, int(graph.sum())])

    outputs = {
        "samples": samples_dir,
        "rewards": write_rows_csv(get_output_path(output_dir, "sample_rewards.csv"),
                                  ["index", "reward", "traj_len", "n_edges"], rows),
        "histogram": write_rows_csv(get_output_path(output_dir, "reward_histogram.csv"),
                                    ["bin_low", "bin_high", "count"], _histogram_rows(result.rewards)),
        "summary": write_json(get_output_path(output_dir, "sample_summary.json"), {
            "n": n,
            "n_distinct": result.n_distinct,
            "n_above_threshold": result.n_above_threshold,
            "reward_threshold": reward_threshold,
            "mean_sample_seconds": result.mean_sample_seconds,
            "n_high_tpr": result.n_high_tpr,
            "tpr_threshold": train_cfg.tpr_threshold,
        }),
    }
    record_manifest(output_dir, "sample", {"checkpoint": str(checkpoint), "n": n, "train": stored},
                    {"sample": train_cfg.seed if seed is None else seed}, time.perf_counter() - started)
    summary = (f"Sampled {n} graphs, {result.n_distinct} distinct, "
               f"{result.n_above_threshold} distinct above reward {reward_threshold:g}.")
    if result.n_high_tpr is not None:
        summary += f" {result.n_high_tpr} distinct with TPR above {train_cfg.tpr_threshold:g}."
    return OpResult(summary, outputs)


def prune_graph(graph_path: Path | str, data_path: Path | str, method: str, param: float,
                output_dir: Path, output_name: str = "pruned_graph.txt") -> OpResult:
    started = time.perf_counter()
    full = load_graph(resolve_input(output_dir, graph_path))
    dataset = read_dataset_csv(resolve_input(output_dir, data_path))
    if dataset.d != full.shape[0]:
        raise ShapeError(f"Graph has {full.shape[0]} nodes, dataset has {dataset.d} columns.")
    result = prune(full, dataset, method, param)
    out = write_edge_list(get_output_path(output_dir, output_name), result.graph, result.weights)
    record_manifest(output_dir, "prune", {"graph": str(graph_path), "data": str(data_path),
                                          "method": method, "param": param}, {}, time.perf_counter() - started)
    summary = f"Pruned {int(full.sum())} edges down to {int(result.graph.sum())}."
    if result.warnings:
        summary += " Warnings: " + "; ".join(result.warnings)
    return OpResult(summary, {"pruned": out})


def evaluate_graphs(pred_path: Path | str, truth_path: Path | str, output_dir: Path,
                    samples_dir: Path | str | None = None, method: str | None = None,
                    graph_type: str | None = None, seed: int | None = None,
                    output_name: str = "metrics.json") -> tuple[MetricReport, OpResult]:
    """Scores a predicted graph (and optionally a sample set) against the truth."""
    started = time.perf_counter()
    pred = load_graph(resolve_input(output_dir, pred_path))
    truth = load_graph(resolve_input(output_dir, truth_path))
    report = compare(pred, truth)
    if samples_dir is not None:
        files = sorted(resolve_input(output_dir, samples_dir).glob("*.txt"))
        samples = [load_graph(f) for f in files]
        report = report.model_copy(update={
            "e_shd": expected_shd(samples, truth),
            "auroc": auroc(samples, truth),
        })
    outputs = {"metrics": write_json(get_output_path(output_dir, output_name), report.model_dump(exclude_none=True))}
    if method is not None:
        outputs["results"] = write_rows_csv(
            get_output_path(output_dir, RESULTS_FILE),
            ["seed", "method", "graph_type", "tpr", "fdr", "shd", "e_shd", "auroc"],
            [[seed, method, graph_type, report.tpr, report.fdr, report.shd,
              "" if report.e_shd is None else report.e_shd, "" if report.auroc is None else report.auroc]],
            append=True,
        )
    record_manifest(output_dir, "eval", {"pred": str(pred_path), "truth": str(truth_path),
                                         "samples": None if samples_dir is None else str(samples_dir)},
                    {}, time.perf_counter() - started)
    return report, OpResult(f"TPR={report.tpr:.3f} FDR={report.fdr:.3f} SHD={report.shd}", outputs)


def run_bench_cases(d: int, n_graphs: int, output_dir: Path, seed: int = 0) -> OpResult:
    if n_graphs < 1:
        raise InvalidParameterError(f"Graph count must be at least 1, got {n_graphs}.")
    started = time.perf_counter()
    rows = bench_cases(d, n_graphs, seed)
    out = write_rows_csv(get_output_path(output_dir, BENCH_FILE), ["case", "total_seconds", "mean_length"],
                         [[int(r.case), f"{r.total_seconds:.6f}", repr(r.mean_length)] for r in rows])
    record_manifest(output_dir, "bench-cases", {"d": d, "n": n_graphs}, {"bench": seed}, time.perf_counter() - started)
    lines = ", ".join(f"case {int(r.case)}: {r.total_seconds:.3f}s / len {r.mean_length:.2f}" for r in rows)
    return OpResult(f"Benchmarked {n_graphs} graphs at d={d} ({lines}).", {"bench": out})

