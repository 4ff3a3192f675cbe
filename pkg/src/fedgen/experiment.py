"""Experiment stages: generate data, train, calibrate, evaluate, report.

Output layout under ``output_dir``::

    dataset/                 generate-data (shared by run-all entries)
    checkpoints/client_<c>/  train
    norm_stats.json          train
    rounds.csv, timing.csv   train
    scores/<run_id>.csv      calibrate (validation) and evaluate (test)
    thresholds.json          calibrate
    metrics.json, offsets.csv  evaluate
"""

from __future__ import annotations

import csv
import json
import logging
import os
from pathlib import Path

import numpy as np
import torch

from .config import SCENARIOS, ExperimentConfig
from .datasets import generate_fleet, load_dataset, load_swat, write_dataset
from .detection import (ValidationRun, calibrate_threshold, predict_tau, predicted_labels,
                        read_thresholds, score_run, timestep_scores, write_scores,
                        write_thresholds)
from .evaluation import aggregate_clients, client_metrics, outcome, write_offsets
from .federation import (ROUNDS_HEADER, LocalTrainer, comm_report_rows,
                         round_rows, run_federation)
from .models import FAMILIES, build_model, stable_seed
from .models.checkpoint import load_checkpoint, save_checkpoint
from .timeseries import ClientDataset, NormalizationStats, fit_normalization

log = logging.getLogger("fedgen")


class MissingPrerequisite(RuntimeError):
    pass


def configure_threads() -> None:
    n = os.environ.get("FEDGEN_THREADS")
    if n:
        torch.set_num_threads(max(1, int(n)))


def _out(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir)


def _header(cfg: ExperimentConfig) -> str:
    return f"# config_hash={cfg.hash()} seed={cfg.seed}"


def _stamp(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.hash(), "seed": cfg.seed}


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _require(path: Path, command: str) -> Path:
    if not path.exists():
        raise MissingPrerequisite(f"{path} not found; run `fedgen {command}` first")
    return path


# -- data -------------------------------------------------------------------------


def dataset_dir(cfg: ExperimentConfig) -> Path:
    return _out(cfg) / "dataset"


def cmd_generate_data(cfg: ExperimentConfig) -> Path:
    root = dataset_dir(cfg)
    if cfg.dataset_kind == "synthetic":
        fleet = generate_fleet(cfg.fleet)
        source = {"kind": "synthetic", "config": cfg.fleet.to_dict()}
    else:
        fleet = load_swat(cfg.swat)
        source = {"kind": "swat", "config": dict(vars(cfg.swat))}
    write_dataset(fleet, root, source)
    return root


def _load_fleet(cfg: ExperimentConfig) -> dict[int, ClientDataset]:
    _require(dataset_dir(cfg) / "dataset.json", "generate-data")
    return load_dataset(dataset_dir(cfg))


def _normalized_fleet(fleet, stats: dict[int, NormalizationStats]):
    return {c: ds.normalized(stats[c]) for c, ds in fleet.items()}


def _fit_stats(cfg: ExperimentConfig, fleet) -> dict[int, NormalizationStats]:
    if cfg.scenario == "centralized":
        pooled = fit_normalization([r for c in sorted(fleet) for r in fleet[c].train])
        return {c: pooled for c in fleet}
    return {c: fit_normalization(ds.train) for c, ds in fleet.items()}


# -- training ---------------------------------------------------------------------


def _new_model(cfg: ExperimentConfig, n_sensors: int, window: int):
    torch.manual_seed(stable_seed(cfg.seed, "init", cfg.model_family))
    return build_model(cfg.model_family, cfg.model_overrides, n_sensors, window)


def cmd_train(cfg: ExperimentConfig) -> Path:
    out = _out(cfg)
    fleet = _load_fleet(cfg)
    stats = _fit_stats(cfg, fleet)
    data = _normalized_fleet(fleet, stats)
    any_ds = data[min(data)]
    k, w = any_ds.train[0].n_sensors, any_ds.window

    if cfg.scenario == "centralized":
        windows = np.concatenate([data[c].train_windows() for c in sorted(data)])
        n_runs = sum(data[c].n_train for c in data)
        trainers = {0: LocalTrainer(0, _new_model(cfg, k, w), windows, n_runs, cfg.federation)}
    else:
        trainers = {c: LocalTrainer(c, _new_model(cfg, k, w), data[c].train_windows(),
                                    data[c].n_train, cfg.federation) for c in sorted(data)}

    rows, timing = [], []

    def on_round(rl):
        rows.extend(round_rows(rl))
        timing.append([rl.round, repr(round(rl.wall_time_s, 3))])
        log.info("round %d: mean loss %.5g", rl.round, float(np.mean(list(rl.losses.values()))))

    run_federation(trainers, cfg.policy, cfg.federation, on_round)

    ckpt = out / "checkpoints"
    models = {}
    for c in sorted(data):
        owner = 0 if cfg.scenario == "centralized" else c
        if owner not in models:
            models[owner] = save_checkpoint(trainers[owner].model, ckpt / f"client_{owner}", cfg.seed,
                                            {"config_hash": cfg.hash(), "scenario": cfg.scenario})
    _write_json(out / "norm_stats.json",
                {**_stamp(cfg), "clients": {str(c): stats[c].to_dict() for c in sorted(stats)}})
    with open(out / "rounds.csv", "w", newline="") as fh:
        fh.write(_header(cfg) + "\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(ROUNDS_HEADER)
        wr.writerows(rows)
    with open(out / "timing.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["round", "wall_time_s"])
        wr.writerows(timing)
    return out / "rounds.csv"


def _client_models(cfg: ExperimentConfig, clients) -> dict:
    ckpt = _out(cfg) / "checkpoints"
    _require(_out(cfg) / "rounds.csv", "train")
    cache, out = {}, {}
    for c in clients:
        owner = 0 if cfg.scenario == "centralized" else c
        if owner not in cache:
            cache[owner] = load_checkpoint(_require(ckpt / f"client_{owner}", "train"))[0]
        out[c] = cache[owner]
    return out


def _load_stats(cfg: ExperimentConfig) -> dict[int, NormalizationStats]:
    doc = json.loads(_require(_out(cfg) / "norm_stats.json", "train").read_text())
    return {int(c): NormalizationStats.from_dict(d) for c, d in doc["clients"].items()}


# -- calibration / evaluation --------------------------------------------------------


def _score_split(cfg, models, data, split: str):
    out = {}
    for c in sorted(data):
        ds = data[c]
        series = []
        for run in getattr(ds, split):
            s = score_run(models[c], run, ds.window, ds.stride)
            write_scores(s, _out(cfg) / "scores", _header(cfg))
            series.append((run, s))
        out[c] = series
    return out


def cmd_calibrate(cfg: ExperimentConfig) -> Path:
    fleet = _load_fleet(cfg)
    data = _normalized_fleet(fleet, _load_stats(cfg))
    models = _client_models(cfg, data)
    scored = _score_split(cfg, models, data, "val")
    det = cfg.detection
    thresholds = {}
    for c, series in scored.items():
        runs = [ValidationRun(s, r.tau, r.t_life, r.labels) for r, s in series]
        thresholds[c] = calibrate_threshold(runs, c, det["calibration_budget"], det["m_consecutive"],
                                            cfg.objective)
    path = _out(cfg) / "thresholds.json"
    write_thresholds(thresholds, path, {**_stamp(cfg), "objective": cfg.objective})
    return path


def cmd_evaluate(cfg: ExperimentConfig) -> Path:
    out = _out(cfg)
    thresholds = read_thresholds(_require(out / "thresholds.json", "calibrate"))
    fleet = _load_fleet(cfg)
    data = _normalized_fleet(fleet, _load_stats(cfg))
    models = _client_models(cfg, data)
    scored = _score_split(cfg, models, data, "test")
    m = cfg.detection["m_consecutive"]
    per_client, offset_rows = {}, []
    for c, series in scored.items():
        eps = thresholds[c].epsilon
        ys, preds, tss, outs = [], [], [], []
        for run, s in series:
            tau_hat = predict_tau(s, eps, m)
            o = outcome(run.run_id, run.tau, tau_hat, run.t_life)
            ys.append(run.labels)
            preds.append(predicted_labels(s, run.length, eps, m, run.persistent))
            tss.append(timestep_scores(s, run.length))
            outs.append(o)
            offset_rows.append((c, o))
        per_client[c] = client_metrics(ys, preds, tss, outs, cfg.evaluation)
    doc = {**_stamp(cfg), "scenario": cfg.scenario, "model_family": cfg.model_family,
           **aggregate_clients(per_client)}
    _write_json(out / "metrics.json", doc)
    write_offsets(offset_rows, out / "offsets.csv", _header(cfg))
    return out / "metrics.json"


def cmd_comm_report(cfg: ExperimentConfig) -> Path:
    out = _out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    built = {}
    for fam in FAMILIES:
        built[fam] = build_model(fam).partition()
    fleet_c = cfg.fleet.C if cfg.fleet is not None else cfg.swat.C
    rows = comm_report_rows(fleet_c, cfg.federation.R, cfg.federation.bandwidth_bps, built)
    path = out / "comm.csv"
    with open(path, "w", newline="") as fh:
        fh.write(_header(cfg) + "\n")
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return path


def run_experiment(cfg: ExperimentConfig, regenerate: bool = False) -> Path:
    """All stages for one (scenario, family); reuses an existing dataset directory."""
    if regenerate or not (dataset_dir(cfg) / "dataset.json").exists():
        cmd_generate_data(cfg)
    cmd_train(cfg)
    cmd_calibrate(cfg)
    return cmd_evaluate(cfg)


def _link_dataset(src: Path, entry: ExperimentConfig) -> None:
    dst = dataset_dir(entry)
    if dst.exists() or dst.is_symlink():
        return
    dst.parent.mkdir(parents=True, exist_ok=True)
    os.symlink(os.path.relpath(src, dst.parent), dst)


def cmd_run_all(cfg: ExperimentConfig) -> Path:
    """Every (family, scenario) in ``matrix`` sharing one read-only dataset directory."""
    out = _out(cfg)
    families = cfg.matrix.get("families") or sorted(FAMILIES)
    scenarios = cfg.matrix.get("scenarios") or list(SCENARIOS)
    src = cmd_generate_data(cfg)
    results = []
    for fam in families:
        for sc in scenarios:
            entry = cfg.with_updates(model_family=fam, scenario=sc, output_dir=str(out / fam / sc))
            _link_dataset(src, entry)
            metrics = json.loads(run_experiment(entry).read_text())
            results.append((fam, sc, metrics))
    path = out / "matrix.csv"
    keys = ["f1", "p", "r", "pr_auc", "cost", "dt_fp", "dt_fn"]
    with open(path, "w", newline="") as fh:
        fh.write(_header(cfg) + "\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["scenario", "model_family", *keys])
        for fam, sc, m in results:
            wr.writerow([sc, fam, *[f"{m['macro'][k]:.6f}" for k in keys]])
    with open(out / "offsets_plot.csv", "w", newline="") as fh:
        fh.write(_header(cfg) + "\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["scenario", "model_family", "client", "dt_fp", "dt_fn"])
        for fam, sc, m in results:
            for c, vals in m["clients"].items():
                wr.writerow([sc, fam, c, f"{vals['dt_fp']:.6f}", f"{vals['dt_fn']:.6f}"])
    return path
