import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

from fedgen.cli import main
from fedgen.config import ConfigError, load_config, parse_config

TINY = {
    "scenario": "fed_full",
    "model_family": "lstm_vae",
    "model": {"enc_hidden": [8, 4], "dec_hidden": [4, 8]},
    "dataset": {"synthetic": {"C": 2, "K": 3, "T": 100, "n_train": 2, "n_val": 3, "n_test": 3}},
    "federation": {"R": 2, "E": 1, "lr": 1e-3},
    "detection": {"calibration_budget": 8},
}


def write_config(tmp_path, name="cfg.yaml", **updates):
    doc = {**TINY, "output_dir": str(tmp_path / "out"), **updates}
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def run(cmd, cfg, *extra):
    return main([cmd, "--config", str(cfg), *extra])


def test_config_errors_list_every_key(tmp_path, capsys):
    cfg = write_config(tmp_path, scenario="nope", bogus=1,
                       federation={"R": "ten", "lr": 1e-3}, detection={"calibration_budget": 0})
    assert run("train", cfg) == 2
    err = capsys.readouterr().err
    for key in ("scenario", "bogus", "federation.R", "detection.calibration_budget"):
        assert key in err
    with pytest.raises(ConfigError) as info:
        parse_config({"scenario": "x", "model_family": "y"})
    assert len(info.value.errors) == 2


def test_missing_prerequisite_names_command(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run("evaluate", cfg) == 3
    assert "fedgen" in capsys.readouterr().err
    assert run("train", cfg) == 3
    assert "generate-data" in capsys.readouterr().err


def test_comm_report_lstm_vae_totals(tmp_path):
    cfg = write_config(tmp_path, dataset={"synthetic": {}}, federation={})
    assert run("comm-report", cfg) == 0
    lines = (tmp_path / "out" / "comm.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    rows = {(r["model"], r["policy"]): r for r in csv.DictReader(lines[1:])}
    totals = [float(rows[("lstm_vae", p)]["total_round_mb"]) for p in ("full", "analysis_only", "synthesis_only")]
    assert totals == pytest.approx([7.54, 3.79, 3.75], abs=0.01)
    assert float(rows[("lstm_vae", "full")]["total_gb"]) == pytest.approx(1.13, abs=0.005)


def stage_all(cfg):
    for cmd in ("generate-data", "train", "calibrate", "evaluate"):
        assert run(cmd, cfg) == 0, cmd


def test_stages_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    cfg_a, cfg_b = write_config(a), write_config(b)
    stage_all(cfg_a)
    stage_all(cfg_b)
    out_a, out_b = a / "out", b / "out"
    for name in ("metrics.json", "rounds.csv", "thresholds.json", "offsets.csv", "norm_stats.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name

    h = load_config(cfg_a).hash()
    metrics = json.loads((out_a / "metrics.json").read_text())
    assert metrics["config_hash"] == h and metrics["seed"] == 0
    assert set(metrics["clients"]) == {"0", "1"}
    assert set(metrics["macro"]) == {"f1", "p", "r", "pr_auc", "cost", "dt_fp", "dt_fn"}
    assert (out_a / "rounds.csv").read_text().startswith(f"# config_hash={h} seed=0\n")
    assert json.loads((out_a / "thresholds.json").read_text())["meta"]["config_hash"] == h

    # stage idempotence: re-running train over existing outputs changes nothing
    before = (out_a / "rounds.csv").read_bytes()
    assert run("train", cfg_a) == 0
    assert (out_a / "rounds.csv").read_bytes() == before


def test_seed_override(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert load_config(cfg, seed=3).seed == 3
    assert load_config(cfg, seed=3).hash() != load_config(cfg).hash()
    assert load_config(cfg, seed=3).fleet.seed == 3
    assert run("generate-data", cfg, "--seed", "3", "--output", str(tmp_path / "s3")) == 0
    assert str(tmp_path / "s3") in capsys.readouterr().out
    assert (tmp_path / "s3" / "dataset" / "dataset.json").exists()


def test_run_all_matrix_cardinality(tmp_path):
    cfg = write_config(tmp_path, matrix={"families": ["lstm_vae"], "scenarios": ["fed_full", "centralized"]})
    assert run("run-all", cfg) == 0
    out = tmp_path / "out"
    assert len(list(out.rglob("metrics.json"))) == 2
    rows = list(csv.reader((out / "matrix.csv").read_text().splitlines()[1:]))
    assert rows[0][:3] == ["scenario", "model_family", "f1"]
    assert [r[:2] for r in rows[1:]] == [["fed_full", "lstm_vae"], ["centralized", "lstm_vae"]]
    # centralized trains one pooled model but still reports every client
    central = out / "lstm_vae" / "centralized"
    assert [p.name for p in (central / "checkpoints").iterdir()] == ["client_0"]
    assert set(json.loads((central / "metrics.json").read_text())["clients"]) == {"0", "1"}
    plot = list(csv.reader((out / "offsets_plot.csv").read_text().splitlines()[1:]))
    assert plot[0] == ["scenario", "model_family", "client", "dt_fp", "dt_fn"] and len(plot) == 5


def test_swat_pipeline(tmp_path):
    rng = np.random.default_rng(0)
    n = 1200
    label = np.array(["Normal"] * 600 + ["Normal", "Attack"] * 300)
    label[600:700] = "Attack"
    df = pd.DataFrame(rng.normal(size=(n, 3)), columns=["FIT101", "LIT101", "P101"])
    df.insert(0, "Timestamp", pd.date_range("2015-12-22 16:00:00", periods=n, freq="s").strftime("%d/%m/%Y %I:%M:%S %p"))
    df["Normal/Attack"] = label
    csv_path = tmp_path / "swat.csv"
    df.iloc[rng.permutation(n)].to_csv(csv_path, index=False)
    cfg = write_config(tmp_path, dataset={"swat": {"csv_path": str(csv_path), "C": 2}})
    stage_all(cfg)
    meta = json.loads((tmp_path / "out" / "dataset" / "dataset.json").read_text())
    assert meta["source"]["kind"] == "swat"
    thr = json.loads((tmp_path / "out" / "thresholds.json").read_text())
    assert thr["meta"]["objective"] == "f1"


def test_console_entry_point(tmp_path):
    cfg = write_config(tmp_path, scenario="bad")
    proc = subprocess.run([sys.executable, "-m", "fedgen.cli", "train", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "scenario" in proc.stderr


@pytest.mark.parametrize("path", sorted((Path(__file__).parent.parent / "configs").glob("*.yaml")), ids=lambda p: p.name)
def test_shipped_configs_validate(path):
    cfg = load_config(path)
    assert cfg.hash() == load_config(path).hash()
