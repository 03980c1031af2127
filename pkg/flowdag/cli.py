"""
Command-line driver.

Exit codes: 0 on success, 2 for configuration or validation errors (message
on standard error, nothing written), 3 when training diverges.
"""

from pathlib import Path
from typing import Callable, Optional

import typer
from mcp.server.fastmcp.utilities.logging import configure_logging
from pydantic import ValidationError

from flowdag import experiment_ops
from flowdag.config import RuntimeSettings, load_experiment_config
from flowdag.errors import DeadEndError, TrainingDivergenceError
from flowdag.report_ops import write_run_report


EXIT_INVALID = 2
EXIT_DIVERGED = 3

app = typer.Typer(help="Sample causal DAGs with a flow network over topological sorts.",
                  no_args_is_help=True, add_completion=False)


class _Options:
    def __init__(self, output_dir: Optional[Path], settings: RuntimeSettings):
        self.output_dir = output_dir
        self.settings = settings

    def resolve_dir(self, fallback: str | Path = ".") -> Path:
        return Path(self.output_dir) if self.output_dir is not None else Path(fallback)


def _guarded(action: Callable[[], str]) -> None:
    try:
        message = action()
    except TrainingDivergenceError as e:
        typer.echo(f"Error: training diverged at step {e.step}: {e}", err=True)
        raise typer.Exit(EXIT_DIVERGED)
    except DeadEndError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(EXIT_DIVERGED)
    except (ValueError, FileNotFoundError) as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(EXIT_INVALID)
    typer.echo(message)


def _options(ctx: typer.Context) -> _Options:
    return ctx.obj


@app.callback()
def main(
    ctx: typer.Context,
    output_dir: Optional[Path] = typer.Option(None, "--output-dir", "-o",
                                              help="Directory all run files are read from and written to."),
    log_level: Optional[str] = typer.Option(None, "--log-level", help="DEBUG, INFO, WARNING, ERROR or CRITICAL."),
) -> None:
    try:
        settings = RuntimeSettings()
    except ValidationError as e:
        typer.echo(f"Error: invalid GFC_ environment settings:\n{e}", err=True)
        raise typer.Exit(EXIT_INVALID)
    level = (log_level or settings.log_level).upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        typer.echo(f"Error: unknown log level '{log_level}'.", err=True)
        raise typer.Exit(EXIT_INVALID)
    configure_logging(level)
    ctx.obj = _Options(output_dir, settings)


@app.command("gen-data")
def gen_data(ctx: typer.Context,
             config: Path = typer.Option(..., "--config", help="Experiment JSON.")) -> None:
    """Sample a ground-truth graph and write data.csv, truth.txt and data.json."""
    opts = _options(ctx)

    def action() -> str:
        cfg = load_experiment_config(config)
        return experiment_ops.generate_dataset(cfg, opts.resolve_dir(cfg.output_dir)).summary

    _guarded(action)


@app.command()
def train(ctx: typer.Context,
          config: Path = typer.Option(..., "--config", help="Experiment JSON."),
          workers: Optional[int] = typer.Option(None, "--workers", min=1,
                                                help="Sampling threads; GFC_WORKERS overrides it.")) -> None:
    """Train on the run's data.csv and write the log, checkpoints and best graph."""
    opts = _options(ctx)

    def action() -> str:
        cfg = load_experiment_config(config)
        n_workers = opts.settings.resolve_workers(workers)
        return experiment_ops.run_training(cfg, opts.resolve_dir(cfg.output_dir), workers=n_workers).summary

    _guarded(action)


@app.command()
def sample(ctx: typer.Context,
           checkpoint: Path = typer.Option(Path(experiment_ops.FINAL_CHECKPOINT), "--checkpoint",
                                           help="Checkpoint stem (without .json/.bin)."),
           n: int = typer.Option(1000, "--n", help="Number of graphs to draw."),
           data: Optional[Path] = typer.Option(None, "--data", help="Dataset for rewards and pruning."),
           reward_threshold: float = typer.Option(0.0, "--reward-threshold"),
           seed: Optional[int] = typer.Option(None, "--seed")) -> None:
    """Draw graphs from a trained checkpoint and write them with a reward histogram."""
    opts = _options(ctx)
    _guarded(lambda: experiment_ops.sample_graphs(
        checkpoint, n, opts.resolve_dir(), data_path=data, reward_threshold=reward_threshold,
        seed=seed, workers=opts.settings.resolve_workers(),
    ).summary)


@app.command()
def prune(ctx: typer.Context,
          graph: Path = typer.Option(..., "--graph", help="Edge list or dense CSV of a full DAG."),
          data: Path = typer.Option(..., "--data", help="Dataset CSV."),
          method: str = typer.Option("threshold", "--method", help="threshold or lasso."),
          param: Optional[float] = typer.Option(None, "--param", help="omega (threshold) or lambda (lasso)."),
          out: str = typer.Option("pruned_graph.txt", "--out")) -> None:
    """Prune a fully connected DAG by regression coefficients."""
    opts = _options(ctx)
    value = param if param is not None else (0.3 if method == "threshold" else 0.1)
    _guarded(lambda: experiment_ops.prune_graph(graph, data, method, value, opts.resolve_dir(), out).summary)


@app.command("eval")
def evaluate(ctx: typer.Context,
             pred: Path = typer.Option(..., "--pred", help="Predicted graph."),
             truth: Path = typer.Option(..., "--truth", help="Ground-truth graph."),
             samples: Optional[Path] = typer.Option(None, "--samples", help="Directory of sampled graphs."),
             method: Optional[str] = typer.Option(None, "--method", help="Label for a results.csv row."),
             graph_type: Optional[str] = typer.Option(None, "--graph-type"),
             seed: Optional[int] = typer.Option(None, "--seed"),
             out: str = typer.Option("metrics.json", "--out")) -> None:
    """Score a predicted graph against the truth and write the metrics JSON."""
    opts = _options(ctx)
    _guarded(lambda: experiment_ops.evaluate_graphs(
        pred, truth, opts.resolve_dir(), samples_dir=samples, method=method,
        graph_type=graph_type, seed=seed, output_name=out,
    )[1].summary)


@app.command("bench-cases")
def bench(ctx: typer.Context,
          d: int = typer.Option(..., "--d", help="Node count."),
          n: int = typer.Option(1000, "--n", help="Graphs per case."),
          seed: int = typer.Option(0, "--seed")) -> None:
    """Time uniform-policy sampling under each sampling case."""
    opts = _options(ctx)
    _guarded(lambda: experiment_ops.run_bench_cases(d, n, opts.resolve_dir(), seed=seed).summary)


@app.command()
def report(ctx: typer.Context,
           run_dir: Optional[Path] = typer.Option(None, "--run-dir", help="Defaults to --output-dir."),
           name: str = typer.Option("report", "--name"),
           pdf: bool = typer.Option(False, "--pdf", help="Also convert to PDF with docx2pdf.")) -> None:
    """Render a run directory to a Word report."""
    opts = _options(ctx)
    target = run_dir if run_dir is not None else opts.resolve_dir()
    _guarded(lambda: f"Report written to {write_run_report(target, name=name, pdf=pdf)}")


@app.command()
def serve() -> None:
    """Run the MCP server over stdio."""
    from flowdag.server import mcp

    mcp.run()


if __name__ == "__main__":
    app()
