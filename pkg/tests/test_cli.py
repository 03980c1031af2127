import json

import pytest
from typer.testing import CliRunner

from flowdag import experiment_ops
from flowdag.cli import app
from flowdag.errors import TrainingDivergenceError
from flowdag.utils import read_rows_csv

runner = CliRunner()

SMALL = {
    "data": {"d": 4, "n": 200, "beta": 1, "seed": 3, "noise": {"kind": "gumbel"}},
    "train": {"batch": 4, "epochs": 3, "hidden_width": 8, "uniform_epochs": 1, "log_every": 1, "seed": 5},
    "prune": {"method": "threshold", "omega": 0.3},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL))
    return path


def invoke(out_dir, *args):
    return runner.invoke(app, ["--output-dir", str(out_dir), *map(str, args)])


def test_full_workflow(tmp_path, config_file):
    run = tmp_path / "run"
    assert invoke(run, "gen-data", "--config", config_file).exit_code == 0
    for name in ("data.csv", "truth.txt", "data.json", "manifest.json"):
        assert (run / name).exists()

    result = invoke(run, "train", "--config", config_file)
    assert result.exit_code == 0, result.output
    log = read_rows_csv(run / "train_log.csv")
    assert [row["epoch"] for row in log] == ["0", "1", "2"]
    assert "high_tpr_count" in log[0]
    assert (run / "checkpoints" / "final.json").exists()
    assert (run / "best_graph.txt").exists()
    assert (run / "best_metrics.json").exists()

    result = invoke(run, "sample", "--n", 5, "--reward-threshold", 1.0)
    assert result.exit_code == 0, result.output
    assert len(list((run / "samples").glob("graph_*.txt"))) == 5
    assert list(read_rows_csv(run / "reward_histogram.csv")[0]) == ["bin_low", "bin_high", "count"]
    summary = json.loads((run / "sample_summary.json").read_text())
    assert summary["n"] == 5 and 1 <= summary["n_distinct"] <= 5
    assert summary["n_above_threshold"] <= summary["n_distinct"]
    assert 0 <= summary["n_high_tpr"] <= summary["n_distinct"]

    result = invoke(run, "prune", "--graph", "best_full_dag.txt", "--data", "data.csv", "--method", "lasso",
                    "--param", 0.1)
    assert result.exit_code == 0, result.output
    assert (run / "pruned_graph.txt").exists()

    result = invoke(run, "bench-cases", "--d", 5, "--n", 3)
    assert result.exit_code == 0, result.output
    assert [row["case"] for row in read_rows_csv(run / "bench_cases.csv")] == ["1", "2", "3"]

    result = invoke(run, "eval", "--pred", "truth.txt", "--truth", "truth.txt")
    assert result.exit_code == 0, result.output
    assert json.loads((run / "metrics.json").read_text()) == {"tpr": 1.0, "fdr": 0.0, "shd": 0}

    result = invoke(run, "report")
    assert result.exit_code == 0, result.output
    assert (run / "report.docx").exists()

    manifest = json.loads((run / "manifest.json").read_text())
    assert set(manifest) == {"gen-data", "train", "sample", "prune", "bench-cases", "eval"}
    assert manifest["train"]["config"]["train"]["batch"] == 4
    assert {"git_describe", "seeds", "wall_seconds"} <= set(manifest["train"])


def test_runs_reproduce_byte_identically(tmp_path, config_file):
    outputs = []
    for name in ("a", "b"):
        run = tmp_path / name
        assert invoke(run, "gen-data", "--config", config_file).exit_code == 0
        assert invoke(run, "train", "--config", config_file, "--workers", 1).exit_code == 0
        outputs.append([(run / f).read_bytes() for f in
                        ("data.csv", "truth.txt", "best_graph.txt", "checkpoints/final.bin", "checkpoints/final.json")])
    assert outputs[0] == outputs[1]


def test_missing_node_count_exits_2_without_writing(tmp_path):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"train": {"epochs": 1}}))
    run = tmp_path / "run"
    result = invoke(run, "gen-data", "--config", config)
    assert result.exit_code == 2
    assert not run.exists()


def test_train_without_data_exits_2(tmp_path, config_file):
    result = invoke(tmp_path / "empty", "train", "--config", config_file)
    assert result.exit_code == 2


def test_eval_appends_results_row(tmp_path, config_file):
    run = tmp_path / "run"
    invoke(run, "gen-data", "--config", config_file)
    for seed in (0, 1):
        result = invoke(run, "eval", "--pred", "truth.txt", "--truth", "truth.txt", "--method", "oracle",
                        "--graph-type", "er", "--seed", seed)
        assert result.exit_code == 0, result.output
    rows = read_rows_csv(run / "results.csv")
    assert [r["seed"] for r in rows] == ["0", "1"]
    assert rows[0]["method"] == "oracle" and rows[0]["shd"] == "0"


def test_divergence_exits_3(tmp_path, config_file, monkeypatch):
    def diverge(*args, **kwargs):
        raise TrainingDivergenceError("Non-finite flow-matching loss", step=7)

    monkeypatch.setattr(experiment_ops, "run_training", diverge)
    result = invoke(tmp_path, "train", "--config", config_file)
    assert result.exit_code == 3


def test_bad_log_level_exits_2(tmp_path):
    result = runner.invoke(app, ["--log-level", "LOUD", "bench-cases", "--d", "3"])
    assert result.exit_code == 2


def test_environment_overrides_workers_flag(tmp_path, config_file, monkeypatch):
    seen = {}

    def fake_training(cfg, output_dir, workers=1):
        seen["workers"] = workers
        return experiment_ops.OpResult("trained", {})

    monkeypatch.setenv("GFC_WORKERS", "2")
    monkeypatch.setattr(experiment_ops, "run_training", fake_training)
    result = invoke(tmp_path, "train", "--config", config_file, "--workers", 5)
    assert result.exit_code == 0, result.output
    assert seen["workers"] == 2
