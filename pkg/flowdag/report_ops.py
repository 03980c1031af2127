"""
Run report rendering with python-docx.
"""

from __future__ import annotations

from pathlib import Path

from docx import Document
from mcp.server.fastmcp.utilities.logging import get_logger

from flowdag.utils import get_output_path, read_json, read_rows_csv

logger = get_logger(__name__)

TABLE_STYLE = "Table Grid"


def _add_table(document, header: list[str], rows: list[list]) -> None:
    table = document.add_table(rows=1, cols=len(header))
    table.style = TABLE_STYLE
    for cell, text in zip(table.rows[0].cells, header):
        cell.text = str(text)
    for row in rows:
        cells = table.add_row().cells
        for cell, value in zip(cells, row):
            cell.text = str(value)


def _flatten(payload: dict, prefix: str = "") -> list[list[str]]:
    rows = []
    for key in sorted(payload):
        value = payload[key]
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            rows.extend(_flatten(value, prefix=f"{name}."))
        else:
            rows.append([name, value])
    return rows


def _log_summary(log_rows: list[dict[str, str]]) -> list[list]:
    if not log_rows:
        return []
    first, last = log_rows[0], log_rows[-1]
    best = max(float(r["best_reward"]) for r in log_rows)
    summary = [
        ["epochs", len(log_rows)],
        ["first mean_loss", first["mean_loss"]],
        ["last mean_loss", last["mean_loss"]],
        ["best_reward", repr(best)],
        ["last mean_traj_len", last["mean_traj_len"]],
        ["total wall_ms", f"{sum(float(r['wall_ms']) for r in log_rows):.1f}"],
    ]
    if "high_tpr_count" in last:
        summary.append(["last high_tpr_count", last["high_tpr_count"]])
    return summary


def write_run_report(run_dir: Path | str, name: str = "report", pdf: bool = False) -> Path:
    """Renders the manifest, metrics, training log and bench table of a run directory.

    Sections whose source file is missing are skipped. Raises ValueError when
    the run directory has no manifest.
    """
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ValueError(f"Run directory '{run_dir}' has no manifest.json.")
    manifest = read_json(manifest_path)

    document = Document()
    document.add_heading(f"Run report: {run_dir.name}", 0)

    document.add_heading("Commands", level=1)
    _add_table(document, ["command", "git", "wall seconds"],
               [[cmd, entry.get("git_describe", ""), entry.get("wall_seconds", "")]
                for cmd, entry in sorted(manifest.items())])
    for cmd, entry in sorted(manifest.items()):
        document.add_heading(f"{cmd} configuration", level=2)
        _add_table(document, ["key", "value"], _flatten(entry.get("config") or {}))

    for metrics_name in ("best_metrics.json", "metrics.json"):
        path = run_dir / metrics_name
        if path.exists():
            document.add_heading(f"Metrics ({metrics_name})", level=1)
            _add_table(document, ["metric", "value"], _flatten(read_json(path)))

    log_path = run_dir / "train_log.csv"
    if log_path.exists():
        document.add_heading("Training log", level=1)
        _add_table(document, ["quantity", "value"], _log_summary(read_rows_csv(log_path)))

    summary_path = run_dir / "sample_summary.json"
    if summary_path.exists():
        document.add_heading("Sampling", level=1)
        _add_table(document, ["quantity", "value"], _flatten(read_json(summary_path)))

    bench_path = run_dir / "bench_cases.csv"
    if bench_path.exists():
        document.add_heading("Sampling cost per case", level=1)
        rows = read_rows_csv(bench_path)
        _add_table(document, ["case", "total_seconds", "mean_length"],
                   [[r["case"], r["total_seconds"], r["mean_length"]] for r in rows])

    out = get_output_path(run_dir, f"{name}.docx")
    document.save(out)
    logger.info("Wrote report %s", out)
    if pdf:
        return convert_to_pdf(out)
    return out


def convert_to_pdf(docx_path: Path | str) -> Path:
    """Converts a rendered report to PDF next to it; needs Word or LibreOffice."""
    from docx2pdf import convert

    docx_path = Path(docx_path)
    if not docx_path.exists():
        raise ValueError(f"Report '{docx_path}' not found.")
    pdf_path = docx_path.with_suffix(".pdf")
    convert(str(docx_path), str(pdf_path))
    return pdf_path
