"""
MCP server exposing the experiment operations.

Every run lives in its own directory under GFC_RUNS_DIR (default ./runs);
tools take the run id and return a one-line result or an error string.
"""

from pathlib import Path

from mcp.server.fastmcp import FastMCP

from flowdag import experiment_ops
from flowdag.config import RuntimeSettings, parse_experiment_config
from flowdag.report_ops import write_run_report
from flowdag.utils import read_json

mcp = FastMCP("FlowDagServer",
              instructions="Generates synthetic causal datasets, trains a flow network that samples DAGs "
                           "over topological sorts, and evaluates the sampled graphs. Each run is a directory "
                           "of CSV and JSON files.")


def _run_dir(run_id: str) -> Path:
    if not run_id or "/" in run_id or "\\" in run_id or run_id in (".", ".."):
        raise ValueError(f"Invalid run id '{run_id}'.")
    return Path(RuntimeSettings().runs_dir) / run_id


def generate_dataset(run_id: str, config: dict) -> str:
    """Samples a ground-truth DAG and an observational dataset into a run.

    Args:
        run_id (str): Run directory name under the runs root.
        config (dict): Experiment configuration with `data`, `train` and `prune` sections.
    """
    try:
        cfg = parse_experiment_config(config)
        return experiment_ops.generate_dataset(cfg, _run_dir(run_id)).summary
    except Exception as e:
        return f"Error generating dataset: {str(e)}"


def train_sampler(run_id: str, config: dict, workers: int = 0) -> str:
    """Trains the DAG sampler on the run's data.csv.

    Args:
        run_id (str): Run directory holding data.csv (and optionally truth.txt).
        config (dict): Experiment configuration; `data.d` must match the dataset.
        workers (int, optional): Sampling threads, 1 when 0; GFC_WORKERS overrides it.
    """
    try:
        cfg = parse_experiment_config(config)
        n_workers = RuntimeSettings().resolve_workers(workers)
        return experiment_ops.run_training(cfg, _run_dir(run_id), workers=n_workers).summary
    except Exception as e:
        return f"Error training: {str(e)}"


def sample_graphs(run_id: str, n: int = 1000, reward_threshold: float = 0.0, seed: int = None) -> str:
    """Draws graphs from the run's final checkpoint.

    Args:
        run_id (str): Run directory holding checkpoints/final.json and .bin.
        n (int, optional): Number of graphs to draw.
        reward_threshold (float, optional): Reward cut for the count of distinct good graphs.
        seed (int, optional): Sampling seed; the training seed when omitted.
    """
    try:
        return experiment_ops.sample_graphs(experiment_ops.FINAL_CHECKPOINT, n, _run_dir(run_id),
                                            reward_threshold=reward_threshold, seed=seed,
                                            workers=RuntimeSettings().resolve_workers()).summary
    except Exception as e:
        return f"Error sampling graphs: {str(e)}"


def prune_graph(run_id: str, graph_file: str = experiment_ops.BEST_FULL_FILE, method: str = "threshold",
                param: float = 0.3, output_name: str = "pruned_graph.txt") -> str:
    """Prunes a fully connected DAG of the run against its data.csv.

    Args:
        run_id (str): Run directory.
        graph_file (str, optional): Graph file inside the run directory.
        method (str, optional): "threshold" or "lasso".
        param (float, optional): omega for threshold, lambda for lasso.
        output_name (str, optional): Edge list written inside the run directory.
    """
    try:
        return experiment_ops.prune_graph(graph_file, experiment_ops.DATA_FILE, method, param,
                                          _run_dir(run_id), output_name).summary
    except Exception as e:
        return f"Error pruning graph: {str(e)}"


def evaluate_graph(run_id: str, pred_file: str = experiment_ops.BEST_GRAPH_FILE, use_samples: bool = False) -> str:
    """Scores a predicted graph of the run against its truth.txt."""
    try:
        _, result = experiment_ops.evaluate_graphs(pred_file, experiment_ops.TRUTH_FILE, _run_dir(run_id),
                                                   samples_dir="samples" if use_samples else None)
        return result.summary
    except Exception as e:
        return f"Error evaluating graph: {str(e)}"


def bench_cases(run_id: str, d: int, n: int = 1000, seed: int = 0) -> str:
    """Times uniform-policy sampling under each of the three sampling cases."""
    try:
        return experiment_ops.run_bench_cases(d, n, _run_dir(run_id), seed=seed).summary
    except Exception as e:
        return f"Error benchmarking cases: {str(e)}"


def write_report(run_id: str, pdf: bool = False) -> str:
    """Renders the run to report.docx (and report.pdf when requested)."""
    try:
        return f"Report written to: {write_run_report(_run_dir(run_id), pdf=pdf).resolve()}"
    except Exception as e:
        return f"Error writing report: {str(e)}"


def list_runs() -> str:
    """Lists run directories that have a manifest."""
    try:
        root = Path(RuntimeSettings().runs_dir)
        runs = sorted(p.name for p in root.glob("*") if (p / experiment_ops.MANIFEST_FILE).exists())
        if not runs:
            return f"No runs found in {root.resolve()}"
        return "Available runs:\n" + "\n".join(f"- {r}" for r in runs)
    except Exception as e:
        return f"Error listing runs: {str(e)}"


@mcp.resource("flowdag://{run_id}/metrics")
def get_run_metrics(run_id: str) -> str:
    """Returns the run's metrics JSON (metrics.json, else best_metrics.json)."""
    try:
        run_dir = _run_dir(run_id)
        for name in ("metrics.json", "best_metrics.json"):
            if (run_dir / name).exists():
                return (run_dir / name).read_text()
        return f"Error: run '{run_id}' has no metrics yet."
    except Exception as e:
        return f"Error reading metrics: {str(e)}"


mcp.tool()(generate_dataset)
mcp.tool()(train_sampler)
mcp.tool()(sample_graphs)
mcp.tool()(prune_graph)
mcp.tool()(evaluate_graph)
mcp.tool()(bench_cases)
mcp.tool()(write_report)
mcp.tool()(list_runs)


@mcp.prompt()
def flowdag_usage() -> str:
    """Provides guidance on running an experiment through this server."""
    return """
# FlowDag Server Usage Guide

A run is a directory under the runs root. A typical experiment:

1. `generate_dataset("er12", {"data": {"d": 12, "n": 1000, "graph_type": "er", "beta": 2,
   "noise": {"kind": "gumbel"}}, "train": {"case": 3}})` writes data.csv, truth.txt and data.json.
2. `train_sampler("er12", <same config>)` writes train_log.csv, checkpoints/final and best_graph.txt.
   Training with case 3 samples one node ordering per trajectory and is the cheapest;
   case 2 stops once the ordering is identified; case 1 always adds d(d-1)/2 edges.
3. `sample_graphs("er12", 1000)` writes samples/graph_XXXXX.txt and reward_histogram.csv.
4. `evaluate_graph("er12", use_samples=True)` writes metrics.json with TPR, FDR, SHD,
   expected SHD and AUROC.
5. `write_report("er12")` renders everything to report.docx.

Read metrics with the resource `flowdag://er12/metrics`.

Rewards: "varsortability" (scale c, default 100) suits raw-scale linear data;
"bic" (temperature tau, default n*d) is scale-free but slower.
"""


if __name__ == "__main__":
    mcp.run()
