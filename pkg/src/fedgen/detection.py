"""Window scoring, change-point extraction and per-client threshold calibration."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from scipy.stats import norm

from .models.base import GenerativeModel, stable_seed
from .timeseries import RunRecord, window_array

SCORE_CHUNK = 1024


@dataclass(frozen=True)
class ScoreSeries:
    scores: np.ndarray
    start_ts: np.ndarray
    run_id: str

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        st = np.asarray(self.start_ts, dtype=np.int64)
        if s.shape != st.shape or s.ndim != 1:
            raise ValueError(f"{self.run_id}: scores and start_ts must be aligned vectors")
        bad = np.flatnonzero(~np.isfinite(s))
        if bad.size:
            raise ValueError(f"{self.run_id}: non-finite score at window start_t={st[bad[0]]}")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "start_ts", st)


@dataclass(frozen=True)
class Threshold:
    epsilon: float
    client_id: int
    objective: float
    evaluations: int

    def to_dict(self) -> dict:
        return asdict(self)


def score_run(model: GenerativeModel, run: RunRecord, size: int = 20, stride: int = 5) -> ScoreSeries:
    """Score every window of a run; any randomness is seeded from the run id."""
    x, starts = window_array(run, size, stride)
    dtype = next(model.parameters()).dtype
    model.eval()
    out = []
    for i in range(0, len(x), SCORE_CHUNK):
        chunk = torch.as_tensor(x[i:i + SCORE_CHUNK], dtype=dtype)
        out.append(model.score_windows(chunk, stable_seed(run.run_id, i // SCORE_CHUNK)))
    try:
        return ScoreSeries(np.concatenate(out), starts, run.run_id)
    except ValueError as exc:
        raise ValueError(f"scoring {model.family}: {exc}") from None


def first_alarm_index(scores: np.ndarray, epsilon, m: int = 1):
    """Index of the first window opening ``m`` consecutive exceedances (``-1`` if none).

    ``epsilon`` may be an array; the result then has the same shape.
    """
    if m < 1:
        raise ValueError("m_consecutive must be >= 1")
    s = np.asarray(scores, dtype=np.float64)
    if len(s) < m:
        return np.full(np.shape(epsilon), -1) if np.ndim(epsilon) else -1
    # the window ``i`` opens a qualifying run iff min(s[i:i+m]) > eps
    runmin = np.lib.stride_tricks.sliding_window_view(s, m).min(axis=1)
    prefix = np.maximum.accumulate(runmin)
    idx = np.searchsorted(prefix, np.asarray(epsilon, dtype=np.float64), side="right")
    return np.where(idx < len(prefix), idx, -1)


def predict_tau(series: ScoreSeries, epsilon: float, m_consecutive: int = 1) -> int | None:
    i = int(first_alarm_index(series.scores, epsilon, m_consecutive))
    return None if i < 0 else int(series.start_ts[i])


def timestep_scores(series: ScoreSeries, length: int) -> np.ndarray:
    """Each timestep takes the score of the latest window starting at or before it."""
    idx = np.searchsorted(series.start_ts, np.arange(length), side="right") - 1
    return series.scores[np.clip(idx, 0, None)]


def predicted_labels(series: ScoreSeries, length: int, epsilon: float, m_consecutive: int = 1,
                     persistent: bool = True) -> np.ndarray:
    """Persistent runs: ``1[t >= tau_hat]``; otherwise per-timestep exceedance."""
    if not persistent:
        return (timestep_scores(series, length) > epsilon).astype(np.int8)
    tau_hat = predict_tau(series, epsilon, m_consecutive)
    y = np.zeros(length, dtype=np.int8)
    if tau_hat is not None:
        y[tau_hat:] = 1
    return y


# -- calibration ----------------------------------------------------------------


@dataclass(frozen=True)
class ValidationRun:
    series: ScoreSeries
    tau: int | None
    t_life: int
    labels: np.ndarray | None = None


def offset_objective(runs: Sequence[ValidationRun], m: int = 1) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized ``J(eps) = mean_i (dt_FP + dt_FN)`` over validation runs."""
    if not runs:
        raise ValueError("empty validation set")

    def J(eps):
        eps = np.atleast_1d(np.asarray(eps, dtype=np.float64))
        total = np.zeros_like(eps)
        for r in runs:
            idx = first_alarm_index(r.series.scores, eps, m)
            has = idx >= 0
            tau_hat = np.where(has, r.series.start_ts[np.clip(idx, 0, None)], 0)
            if r.tau is None:
                total += np.where(has, r.t_life - tau_hat, 0)
            else:
                total += np.where(has, np.abs(r.tau - tau_hat), r.t_life - r.tau)
        return total / len(runs)

    return J


def f1_objective(runs: Sequence[ValidationRun], m: int = 1) -> Callable[[np.ndarray], np.ndarray]:
    """``-F1`` of per-timestep exceedance pooled over runs (for intermittent labels)."""
    if not runs:
        raise ValueError("empty validation set")
    per_t = [timestep_scores(r.series, len(r.labels)) for r in runs]
    y = np.concatenate([r.labels for r in runs]).astype(bool)
    s = np.concatenate(per_t)

    def J(eps):
        eps = np.atleast_1d(np.asarray(eps, dtype=np.float64))
        out = np.empty_like(eps)
        for k, e in enumerate(eps):
            pred = s > e
            tp = np.sum(pred & y)
            denom = pred.sum() + y.sum()
            out[k] = -(2 * tp / denom) if denom else 0.0
        return out

    return J


def _gp_posterior(x_obs, y_obs, x_new, lengthscales=(0.01, 0.02, 0.05, 0.1, 0.2, 0.5)):
    """Zero-mean GP with an exponential (Matern-1/2) kernel on standardized targets.

    The objective is piecewise constant in epsilon with narrow dips, so a rough
    kernel fits it far better than a squared-exponential one.  The lengthscale
    is picked by marginal likelihood from a small grid.
    """
    mu_y, sd_y = y_obs.mean(), y_obs.std()
    sd_y = sd_y if sd_y > 0 else 1.0
    y = (y_obs - mu_y) / sd_y
    best = None
    for ell in lengthscales:
        K = np.exp(-np.abs(x_obs[:, None] - x_obs[None, :]) / ell) + 1e-6 * np.eye(len(x_obs))
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            continue
        alpha = np.linalg.solve(L.T, np.linalg.solve(L, y))
        lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum()
        if best is None or lml > best[0]:
            best = (lml, ell, L, alpha)
    _, ell, L, alpha = best
    Ks = np.exp(-np.abs(x_new[:, None] - x_obs[None, :]) / ell)
    mean = Ks @ alpha
    v = np.linalg.solve(L, Ks.T)
    var = np.clip(1.0 - (v ** 2).sum(axis=0), 1e-12, None)
    return mu_y + sd_y * mean, sd_y * np.sqrt(var)


def bayes_minimize(J: Callable[[np.ndarray], np.ndarray], candidates: np.ndarray, budget: int = 50,
                   n_init: int = 15, xi: float = 0.0):
    """Minimize ``J`` over sorted candidate thresholds with a GP-EI search in rank space.

    Returns ``(best_value, best_objective, evaluations)``.  Ties go to the smaller value.
    """
    cand = np.unique(np.asarray(candidates, dtype=np.float64))
    n = len(cand)
    if n == 0:
        raise ValueError("no candidate thresholds")
    budget = max(1, min(int(budget), n))
    pos = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
    if budget == 1:
        init = [n // 2]
    else:
        init = sorted(set(np.round(np.linspace(0, n - 1, min(n_init, budget))).astype(int).tolist()))
    evaluated = {}
    vals = J(cand[init])
    for i, v in zip(init, vals):
        evaluated[int(i)] = float(v)
    while len(evaluated) < budget:
        idx = np.fromiter(evaluated, dtype=int)
        y = np.array([evaluated[i] for i in idx])
        free = np.setdiff1d(np.arange(n), idx)
        mean, sd = _gp_posterior(pos[idx], y, pos[free])
        z = (y.min() - mean - xi) / sd
        ei = (y.min() - mean - xi) * norm.cdf(z) + sd * norm.pdf(z)
        pick = int(free[np.argmax(ei)])
        evaluated[pick] = float(J(cand[[pick]])[0])
    best = min(evaluated, key=lambda i: (evaluated[i], i))
    return float(cand[best]), evaluated[best], len(evaluated)


def alarm_breakpoints(scores: np.ndarray, m: int = 1) -> np.ndarray:
    """Observed scores at which the first alarm of a run can move.

    ``tau_hat`` only changes when epsilon crosses a running record of the
    ``m``-window minima, so the offset objective is constant between these
    values.  The run minimum is kept as the always-alarm candidate.
    """
    s = np.asarray(scores, dtype=np.float64)
    if len(s) < m:
        return s.copy()
    runmin = np.lib.stride_tricks.sliding_window_view(s, m).min(axis=1)
    return np.unique(np.append(np.maximum.accumulate(runmin), s.min()))


def calibrate_threshold(runs: Sequence[ValidationRun], client_id: int = 0, budget: int = 50,
                        m_consecutive: int = 1, objective: str = "offset") -> Threshold:
    """Pick ``epsilon_c`` among observed validation scores with ``budget`` evaluations."""
    if not runs:
        raise ValueError("empty validation set")
    if objective == "offset":
        J = offset_objective(runs, m_consecutive)
        cand = np.concatenate([alarm_breakpoints(r.series.scores, m_consecutive) for r in runs])
    elif objective == "f1":
        J = f1_objective(runs, m_consecutive)
        cand = np.concatenate([r.series.scores for r in runs])
    else:
        raise ValueError(f"unknown calibration objective {objective!r}")
    eps, val, n_eval = bayes_minimize(J, cand, budget)
    return Threshold(eps, client_id, val, n_eval)


# -- persistence ------------------------------------------------------------------


def write_scores(series: ScoreSeries, directory: Path, header: str = "") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{series.run_id}.csv"
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start_t", "score"])
        for s, v in zip(series.start_ts, series.scores):
            w.writerow([int(s), repr(float(v))])
    return path


def read_scores(path: Path) -> ScoreSeries:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    body = rows[1:]
    return ScoreSeries(np.array([float(r[1]) for r in body]), np.array([int(r[0]) for r in body]),
                       path.stem)


def write_thresholds(thresholds: dict[int, Threshold], path: Path, meta: dict | None = None) -> None:
    doc = {"meta": meta or {}, "thresholds": {str(c): t.to_dict() for c, t in sorted(thresholds.items())}}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_thresholds(path: Path) -> dict[int, Threshold]:
    doc = json.loads(Path(path).read_text())
    return {int(c): Threshold(**t) for c, t in doc["thresholds"].items()}
