from __future__ import annotations

import json
import subprocess
import sys

import pytest

from motionkit.cli import run
from motionkit.ingest import read_tensor

# small, fast settings shared by the pipeline tests
FAST = ["--rate", "10", "--epochs", "2", "--widths", "4,8", "--train-stride", "8",
        "--eval-stride", "4"]


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "bench"
    assert run(["gen-bench", "--users", "10", "--seed", "7", "--out", str(out)]) == 0
    return out


def _tree(root):
    """File bytes under ``root``; run_config.json is compared separately since
    it records the (differing) output path."""
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "run_config.json"}


def _same_config(a, b):
    ca = json.loads((a / "run_config.json").read_text())
    cb = json.loads((b / "run_config.json").read_text())
    return ca.pop("out") != cb.pop("out") and ca == cb


def test_gen_bench_is_reproducible(bench, tmp_path):
    again = tmp_path / "bench"
    assert run(["gen-bench", "--users", "10", "--seed", "7", "--out", str(again)]) == 0
    assert _tree(bench) == _tree(again)
    assert _same_config(bench, again)


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run([]) == 1
    assert run(["no-such-command"]) == 1
    assert run(["train", "--epochs", "many"]) == 1
    assert run(["eigenlocations", "--k", "4"]) == 1
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"not_a_field": 1}))
    assert run(["ingest", "--config", str(cfg)]) == 1
    assert run(["ingest", "--workers", "0"]) == 1


def test_data_errors_exit_2(tmp_path, bench):
    assert run(["ingest", "--data", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    assert run(["ingest", "--data", str(bad), "--out", str(tmp_path)]) == 2
    assert run(["aggregate", "--model", str(tmp_path), "--window", "1", "--out", str(tmp_path),
                "--data", str(bench / "manifest.jsonl")]) == 2


def test_config_precedence(tmp_path, bench, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 7, "seed": 5, "lr": 0.01}))
    monkeypatch.setenv("MOTIONKIT_WORKERS", "3")
    out = tmp_path / "o"
    assert run(["ingest", "--config", str(cfg), "--epochs", "2", "--out", str(out),
                "--data", str(bench / "manifest.jsonl")]) == 0
    resolved = json.loads((out / "run_config.json").read_text())
    assert (resolved["epochs"], resolved["seed"], resolved["lr"]) == (2, 5, 0.01)
    assert resolved["workers"] == 3
    assert resolved["batch_size"] == 32
    assert resolved["command"] == "ingest"
    summary = json.loads((out / "ingest_summary.json").read_text())
    assert len(summary) == 10 and len(summary[0]["recordings"]) == 6


def test_spectransform_shapes(tmp_path, bench):
    out = tmp_path / "st"
    assert run(["spectransform", "--from", "100", "--to", "25", "--locations", "Wrist",
                "--eval-stride", "32", "--data", str(bench / "manifest.jsonl"),
                "--out", str(out)]) == 0
    t = read_tensor(out / "features_100to25.mptn")
    assert tuple(t.values.shape[1:]) == (96, 32)
    assert run(["spectransform", "--from", "25", "--to", "100", "--out", str(out),
                "--data", str(bench / "manifest.jsonl")]) == 2


def test_eigenlocations_k3_rows(tmp_path, bench):
    out = tmp_path / "eig"
    argv = ["eigenlocations", "--k", "3", *FAST, "--epochs", "1",
            "--data", str(bench / "manifest.jsonl"), "--out", str(out)]
    assert run(argv) == 0
    lines = (out / "eigenlocations_k3.csv").read_text().splitlines()
    assert lines[0] == "rank,locations,average_f1"
    assert len(lines) == 1 + 20


def test_pipeline_and_determinism(tmp_path, bench):
    data = ["--data", str(bench / "manifest.jsonl")]
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(["train", *FAST, *data, "--out", str(out / "train")]) == 0
        runs.append(out)
    a, b = runs
    assert _tree(a / "train") == _tree(b / "train")
    assert _same_config(a / "train", b / "train")
    metrics = json.loads((a / "train" / "metrics.json").read_text())
    assert set(metrics["test"]["per_location_f1"]) == {"Wrist", "Ankle", "Thigh", "Head",
                                                       "Chest", "Shoulder"}
    model = str(a / "train" / "model")

    assert run(["eval", "--model", model, *FAST, *data, "--out", str(a / "eval")]) == 0
    assert (a / "eval" / "confusion_all.csv").exists()
    assert run(["aggregate", "--model", model, *FAST, *data, "--window", "30",
                "--out", str(a / "agg")]) == 0
    curve = (a / "agg" / "aggregation_curve.csv").read_text().splitlines()
    assert curve[0].startswith("window_s,") and len(curve) == 6
    assert run(["finetune", "--model", model, "--finetune-epochs", "1", *FAST, *data,
                "--out", str(a / "ft")]) == 0
    assert json.loads((a / "ft" / "finetune.json").read_text())["classes"] == ["pushup", "weights"]
    assert run(["featurize", *FAST, *data, "--locations", "Wrist", "--out", str(a / "feat")]) == 0
    assert json.loads((a / "feat" / "split.json").read_text())["seed"] == 0


def test_synthesis_commands(tmp_path, bench):
    data = ["--data", str(bench / "manifest.jsonl")]
    small = [*FAST, "--ae-epochs", "1", "--synth-epochs", "1", "--users", "10"]
    out = tmp_path / "s"
    assert run(["synth-train", "--source", "Wrist", "--target", "Ankle", *small, *data,
                "--out", str(out)]) == 0
    assert json.loads((out / "synth" / "synth.json").read_text())["target_location"] == "Ankle"
    assert run(["train", *FAST, *data, "--locations", "Ankle", "--out", str(tmp_path / "m")]) == 0
    assert run(["synth-eval", "--synth", str(out / "synth"), "--model", str(tmp_path / "m" / "model"),
                *FAST, *data, "--out", str(tmp_path / "e")]) == 0
    report = json.loads((tmp_path / "e" / "synthesis_report.json").read_text())
    assert 0 <= report["f1_synthetic"] <= 100 and report["n_pairs"] > 0
    assert (tmp_path / "e" / "triptych.pgm").read_bytes().startswith(b"P5\n")


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "motionkit.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("motionkit ")
