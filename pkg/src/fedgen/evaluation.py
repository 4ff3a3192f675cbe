"""Point metrics, PR-AUC, detection-time offsets and the asymmetric cost."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class CostConfig:
    c_early: float = 1.0
    c_late: float = 2.0
    normalizer: float | None = None  # None: the run's t_life

    def __post_init__(self):
        if not self.c_late > self.c_early > 0:
            raise ValueError("need c_late > c_early > 0")
        if self.normalizer is not None and self.normalizer <= 0:
            raise ValueError("normalizer must be positive")


@dataclass(frozen=True)
class RunOutcome:
    run_id: str
    tau: int | None
    tau_hat: int | None
    t_life: int
    dt_fp: float
    dt_fn: float

    def __post_init__(self):
        if self.dt_fp < 0 or self.dt_fn < 0 or self.dt_fp * self.dt_fn != 0:
            raise ValueError(f"{self.run_id}: offsets must be non-negative and exclusive")


def time_offsets(tau: int | None, tau_hat: int | None, t_life: int) -> tuple[float, float]:
    """``(dt_FP, dt_FN)``: early alarm lead and late/missed detection lag."""
    if tau is not None and tau_hat is not None:
        return (float(tau - tau_hat), 0.0) if tau_hat <= tau else (0.0, float(tau_hat - tau))
    if tau is None and tau_hat is not None:
        return float(t_life - tau_hat), 0.0
    if tau is not None and tau_hat is None:
        return 0.0, float(t_life - tau)
    return 0.0, 0.0


def outcome(run_id: str, tau, tau_hat, t_life) -> RunOutcome:
    fp, fn = time_offsets(tau, tau_hat, t_life)
    return RunOutcome(run_id, tau, tau_hat, t_life, fp, fn)


def point_metrics(true_labels, pred_labels) -> dict[str, float]:
    y = np.asarray(true_labels).astype(bool)
    p = np.asarray(pred_labels).astype(bool)
    tp = int(np.sum(y & p))
    n_pred, n_pos = int(p.sum()), int(y.sum())
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_pos if n_pos else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def pr_auc(scores, true_labels) -> float:
    """Step-wise area: sum over distinct thresholds of precision * recall increment."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(true_labels).astype(bool)
    n_pos = int(y.sum())
    if n_pos == 0:
        return 0.0
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    # last index of each block of equal scores: thresholds at every distinct value
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp_at, n_at = tp[last], last + 1
    precision = tp_at / n_at
    recall = tp_at / n_pos
    return float(np.sum(precision * np.diff(np.r_[0.0, recall])))


def cost(outcomes: Sequence[RunOutcome], cfg: CostConfig = CostConfig()) -> float:
    if not outcomes:
        return 0.0
    vals = []
    for o in outcomes:
        norm_ = cfg.normalizer if cfg.normalizer is not None else o.t_life
        vals.append(min(1.0, (cfg.c_early * o.dt_fp + cfg.c_late * o.dt_fn) / norm_) if norm_ > 0 else 0.0)
    return float(np.mean(vals))


def aggregate_clients(per_client: Mapping[int, Mapping[str, float]]) -> dict:
    """Unweighted macro mean of every metric; per-client values are kept alongside."""
    ids = sorted(per_client)
    keys = sorted(per_client[ids[0]]) if ids else []
    macro = {k: float(np.mean([per_client[c][k] for c in ids])) for k in keys}
    return {"clients": {str(c): dict(per_client[c]) for c in ids}, "macro": macro}


def client_metrics(true_labels: Sequence[np.ndarray], pred_labels: Sequence[np.ndarray],
                   timestep_scores: Sequence[np.ndarray], outcomes: Sequence[RunOutcome],
                   cost_cfg: CostConfig = CostConfig()) -> dict[str, float]:
    """Metrics of one client's test runs, pooled over timesteps."""
    y = np.concatenate(true_labels)
    m = point_metrics(y, np.concatenate(pred_labels))
    return {
        "f1": m["f1"], "p": m["precision"], "r": m["recall"],
        "pr_auc": pr_auc(np.concatenate(timestep_scores), y),
        "cost": cost(outcomes, cost_cfg),
        "dt_fp": float(np.mean([o.dt_fp for o in outcomes])) if outcomes else 0.0,
        "dt_fn": float(np.mean([o.dt_fn for o in outcomes])) if outcomes else 0.0,
    }


OFFSETS_HEADER = ["client", "run_id", "tau", "tau_hat", "t_life", "dt_fp", "dt_fn"]


def write_offsets(rows: Sequence[tuple[int, RunOutcome]], path: Path, header: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OFFSETS_HEADER)
        for c, o in rows:
            d = asdict(o)
            w.writerow([c, o.run_id, "" if o.tau is None else o.tau,
                        "" if o.tau_hat is None else o.tau_hat, o.t_life,
                        repr(d["dt_fp"]), repr(d["dt_fn"])])
