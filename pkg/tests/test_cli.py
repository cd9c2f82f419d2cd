import json
import os
from pathlib import Path

import pytest

from hydroflock.cli import main

SCENARIO = {
    "topology": {"grid": {"rows": 2, "cols": 2}},
    "steps": 8,
    "seed": 3,
    "f_eco": 5.0,
}

SETTINGS = {
    "preset": "desk",
    "enc": {"gnn_dim": 4, "lstm_hidden": 6, "history_window": 2, "forecast_horizon": 1},
    "pol": {"layers": [12, 8], "mixer_hidden": 4},
    "val": {"layers": [12, 8]},
    "hp": {"epochs": 2},
}


def write_config(tmp_path, **extra):
    config = {"scenario": SCENARIO, "seed": 3, "settings": SETTINGS}
    config.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


class TestSimulate:
    def test_outputs_and_manifest(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "run"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "trajectory.csv").exists()
        assert (out / "metrics.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 3
        assert len(manifest["config_hash"]) == 64

    def test_repeat_run_bit_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--config", str(cfg), "--out", str(out_a)])
        main(["simulate", "--config", str(cfg), "--out", str(out_b)])
        assert (out_a / "trajectory.csv").read_bytes() == (out_b / "trajectory.csv").read_bytes()

    def test_seed_flag_overrides(self, tmp_path):
        cfg = write_config(tmp_path)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--config", str(cfg), "--out", str(out_a)])
        main(["simulate", "--config", str(cfg), "--seed", "99", "--out", str(out_b)])
        assert (out_a / "trajectory.csv").read_bytes() != (out_b / "trajectory.csv").read_bytes()

    def test_missing_seed_exits_2(self, tmp_path, capsys):
        config = {"scenario": SCENARIO, "settings": SETTINGS}
        path = tmp_path / "c.json"
        path.write_text(json.dumps(config), encoding="utf-8")
        assert main(["simulate", "--config", str(path)]) == 2
        err = json.loads(capsys.readouterr().err)
        assert "seed" in err["error"]


class TestTrain:
    def test_training_outputs(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "run"
        code = main(["train", "--config", str(cfg), "--episodes", "4", "--out", str(out)])
        assert code == 0
        assert (out / "train_log.csv").exists()
        assert (out / "checkpoint.json").exists()
        header = (out / "train_log.csv").read_text().splitlines()[0]
        assert header == "episode,return_mean,cv,safety_rate,loss_align,loss_sep,loss_coh"

    def test_repeat_training_bit_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["train", "--config", str(cfg), "--episodes", "4", "--out", str(out_a)])
        main(["train", "--config", str(cfg), "--episodes", "4", "--out", str(out_b)])
        assert (out_a / "train_log.csv").read_bytes() == (out_b / "train_log.csv").read_bytes()
        assert (out_a / "checkpoint.json").read_bytes() == (out_b / "checkpoint.json").read_bytes()

    def test_missing_topology_file_exit_2(self, tmp_path, capsys):
        config = {
            "scenario": {"topology": "missing_topo.json", "steps": 4, "seed": 1},
            "seed": 1,
        }
        path = tmp_path / "c.json"
        path.write_text(json.dumps(config), encoding="utf-8")
        assert main(["train", "--config", str(path), "--episodes", "1"]) == 2
        err = json.loads(capsys.readouterr().err)
        assert "missing_topo.json" in err["path"]

    def test_checkpoint_feeds_simulate(self, tmp_path):
        cfg = write_config(tmp_path)
        run = tmp_path / "run"
        main(["train", "--config", str(cfg), "--episodes", "4", "--out", str(run)])
        out = tmp_path / "sim"
        code = main(
            [
                "simulate", "--config", str(cfg), "--checkpoint", str(run / "checkpoint.json"),
                "--out", str(out), "--deterministic",
            ]
        )
        assert code == 0


class TestEval:
    def test_metrics_from_trajectory(self, tmp_path):
        cfg = write_config(tmp_path)
        run = tmp_path / "run"
        main(["simulate", "--config", str(cfg), "--out", str(run)])
        out = tmp_path / "eval"
        assert main(["eval", "--trajectory", str(run / "trajectory.csv"), "--out", str(out)]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert 0.0 <= metrics["safety_rate"] <= 1.0
        assert "coordination_quality" in metrics

    def test_missing_trajectory_exit_2(self, tmp_path):
        assert main(["eval", "--trajectory", str(tmp_path / "nope.csv")]) == 2


class TestValidateVariance:
    def test_single_case_row(self, tmp_path, capsys):
        code = main(
            [
                "validate-variance", "--chain", "10", "--alpha", "0.93",
                "--sigma", "0.05", "--samples", "20000", "--seed", "1",
            ]
        )
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("chain,alpha,sigma_base")
        fields = lines[1].split(",")
        assert float(fields[-1]) < 0.05  # relative error column

    def test_csv_written(self, tmp_path, capsys):
        out = tmp_path / "v"
        main(
            [
                "validate-variance", "--chain", "2,5", "--alpha", "1.0",
                "--sigma", "0.05", "--samples", "20000", "--seed", "1",
                "--out", str(out),
            ]
        )
        capsys.readouterr()
        assert (out / "variance.csv").exists()


class TestBenchScaling:
    def test_tiny_bench(self, tmp_path, capsys):
        out = tmp_path / "bench"
        code = main(
            ["bench-scaling", "--sizes", "4,9", "--steps", "3", "--seed", "1", "--out", str(out)]
        )
        assert code == 0
        capsys.readouterr()
        rows = (out / "bench.csv").read_text().splitlines()
        assert rows[0] == "nodes,median_step_ms,peak_mem_mb,slope"
        assert len(rows) == 3


class TestIngest:
    def test_roundtrip(self, tmp_path, capsys):
        csv_path = tmp_path / "data.csv"
        lines = ["timestamp,node_id,inflow_m3s,temp_c,precip_mm,demand_m3s"]
        from datetime import datetime, timedelta

        t0 = datetime(2024, 1, 1)
        for i in range(30):
            ts = (t0 + timedelta(hours=i)).isoformat()
            lines.append(f"{ts},A,{1.0 + 0.1 * i},{10 + i % 5},0.2,{2.0 + (i % 7) * 0.3}")
        csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        out = tmp_path / "features"
        assert main(["ingest", "--input", str(csv_path), "--out", str(out)]) == 0
        capsys.readouterr()
        assert (out / "features_A.csv").exists()
        assert (out / "stats.json").exists()


def test_unknown_provider_env_rejected(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("HYDROFLOCK_PROVIDER", "carrier-pigeon:")
    cfg = write_config(tmp_path)
    code = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x")])
    assert code == 2
