"""
Utility functions for reading and writing graphs, datasets and run files.
"""

from __future__ import annotations

import csv
import json
import subprocess
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from flowdag.errors import InvalidGraphError
from flowdag.synthetic import Dataset


def get_output_path(output_dir: Path | str, name: str) -> Path:
    """Returns `name` resolved against the run's output directory, creating parents."""
    path = Path(output_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_edge_list(path: Path | str, A: np.ndarray, weights: np.ndarray | None = None) -> Path:
    """One `from to weight` line per edge; weight 1.0 for binary graphs."""
    A = np.asarray(A)
    path = Path(path)
    lines = [f"# d={A.shape[0]}"]
    for target, source in zip(*np.nonzero(A)):
        w = 1.0 if weights is None else float(weights[target, source])
        lines.append(f"{source} {target} {w!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_edge_list(path: Path | str, d: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Loads an edge list, handling a missing file like the other loaders."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ValueError(f"Graph file '{path}' not found.")
    edges = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line[1:].strip().startswith("d=") and d is None:
                d = int(line[1:].strip()[2:])
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise InvalidGraphError(f"{path}:{line_no}: expected 'from to [weight]', got '{line}'.")
        source, target = int(parts[0]), int(parts[1])
        edges.append((source, target, float(parts[2]) if len(parts) == 3 else 1.0))
    if d is None:
        d = 1 + max((max(s, t) for s, t, _ in edges), default=-1)
    A = np.zeros((d, d), dtype=np.uint8)
    W = np.zeros((d, d))
    for source, target, w in edges:
        A[target, source] = 1
        W[target, source] = w
    return A, W


def read_dense_csv(path: Path | str) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def load_graph(path: Path | str) -> np.ndarray:
    """Binary adjacency from an edge list or a dense CSV (by extension)."""
    path = Path(path)
    if path.suffix == ".csv":
        if not path.exists():
            raise ValueError(f"Graph file '{path}' not found.")
        return (read_dense_csv(path) != 0).astype(np.uint8)
    return read_edge_list(path)[0]


def write_dataset_csv(path: Path | str, data: Dataset) -> Path:
    path = Path(path)
    np.savetxt(path, data.X, fmt="%.17g", delimiter=",", header=",".join(data.columns), comments="")
    return path


def read_dataset_csv(path: Path | str) -> Dataset:
    path = Path(path)
    try:
        with path.open() as f:
            header = f.readline().strip().split(",")
    except FileNotFoundError:
        raise ValueError(f"Dataset file '{path}' not found.")
    X = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"Dataset file '{path}' contains non-finite values.")
    return Dataset(X=X, columns=header)


def write_json(path: Path | str, payload: Any) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path: Path | str) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ValueError(f"File '{path}' not found.")


def write_rows_csv(path: Path | str, header: Sequence[str], rows: Iterable[Sequence[Any]], append: bool = False) -> Path:
    path = Path(path)
    new_file = not (append and path.exists())
    with path.open("a" if append else "w", newline="") as f:
        writer = csv.writer(f)
        if new_file:
            writer.writerow(header)
        writer.writerows(rows)
    return path


def read_rows_csv(path: Path | str) -> list[dict[str, str]]:
    with Path(path).open(newline="") as f:
        return list(csv.DictReader(f))


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             capture_output=True, text=True, check=True, timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"
