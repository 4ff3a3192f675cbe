"""Partial-federation round loop (weighted FedAvg over a shared slice) and traffic accounting."""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import torch

from .models.base import GenerativeModel, SharePolicy, count_params, stable_seed

BYTES_PER_PARAM = 4

# shared-parameter counts as published, keyed by family and policy
PUBLISHED_PARAMS = {
    "lstm_vae": {SharePolicy.FULL: 942_956, SharePolicy.ANALYSIS: 473_866, SharePolicy.SYNTHESIS: 469_090},
    "tano_wgan": {SharePolicy.FULL: 961_115, SharePolicy.ANALYSIS: 472_705, SharePolicy.SYNTHESIS: 488_410},
    "fedsw_tsad": {SharePolicy.FULL: 1_343_855, SharePolicy.ANALYSIS: 131_201, SharePolicy.SYNTHESIS: 386_186},
    "tano_ddpm": {SharePolicy.FULL: 1_022_922, SharePolicy.ANALYSIS: 544_864, SharePolicy.SYNTHESIS: 478_058},
}


@dataclass(frozen=True)
class FederationConfig:
    R: int = 30
    E: int = 4
    lr: float = 1e-4
    batch_size: int = 64
    clients_per_round: int | None = None  # None selects every client each round
    seed: int = 0
    bandwidth_bps: float = 1e7
    early_stop: bool = False
    early_stop_tol: float = 1e-4
    early_stop_patience: int = 3

    def __post_init__(self):
        errors = [f"{k} must be >= 1" for k in ("R", "E", "batch_size") if getattr(self, k) < 1]
        if self.lr < 0:
            errors.append("lr must be >= 0")
        if self.clients_per_round is not None and self.clients_per_round < 1:
            errors.append("clients_per_round must be >= 1")
        if errors:
            raise ValueError("invalid FederationConfig: " + "; ".join(errors))


@dataclass
class RoundLog:
    round: int
    losses: dict[int, float]
    p_share: int
    bytes_down: dict[int, int]
    bytes_up: dict[int, int]
    cumulative_bytes: int
    t_comm_s: float
    checksum: str
    wall_time_s: float = field(default=0.0, compare=False)


def comm_cost(p_share: int, R: int = 30, C: int = 5, bandwidth_bps: float = 1e7) -> dict:
    """Per-client traffic for 32-bit transmission of ``p_share`` scalars each way."""
    n_tx = 2 * p_share
    v_round = 8 * p_share
    return {
        "n_tx_round": n_tx,
        "download_bytes": 4 * p_share,
        "upload_bytes": 4 * p_share,
        "v_round_bytes": v_round,
        "v_total_bytes": 8 * C * R * p_share,
        "t_comm_round_s": 64 * p_share / bandwidth_bps,
    }


def shared_state(model: GenerativeModel, names) -> dict[str, torch.Tensor]:
    params = dict(model.named_parameters())
    return {n: params[n].detach().clone() for n in names}


def broadcast(model: GenerativeModel, state: Mapping[str, torch.Tensor]) -> None:
    """Overwrite the named (shared) parameters in place; everything else is untouched."""
    params = dict(model.named_parameters())
    with torch.no_grad():
        for n, v in state.items():
            params[n].copy_(v)


def aggregate(states: Mapping[int, Mapping[str, torch.Tensor]], weights: Mapping[int, float]) -> dict:
    """Weighted mean of client states, summed in ascending client id in float64."""
    ids = sorted(states)
    if not ids:
        raise ValueError("empty client selection")
    names = list(states[ids[0]])
    for c in ids[1:]:
        if list(states[c]) != names:
            raise ValueError(f"client {c} shares a different parameter set than client {ids[0]}")
    total = float(sum(weights[c] for c in ids))
    out = {}
    for n in names:
        acc = torch.zeros_like(states[ids[0]][n], dtype=torch.float64)
        for c in ids:
            acc += (weights[c] / total) * states[c][n].to(torch.float64)
        out[n] = acc.to(states[ids[0]][n].dtype)
    return out


def state_checksum(state: Mapping[str, torch.Tensor]) -> str:
    h = hashlib.sha256()
    for n in sorted(state):
        h.update(n.encode())
        h.update(np.ascontiguousarray(state[n].detach().cpu().numpy()).tobytes())
    return h.hexdigest()[:16]


class LocalTrainer:
    """Client-side state that persists across rounds: data, optimizers and RNG."""

    def __init__(self, client_id: int, model: GenerativeModel, windows: np.ndarray, n_runs: int,
                 cfg: FederationConfig):
        self.client_id = client_id
        self.model = model
        self.x = torch.as_tensor(windows, dtype=next(model.parameters()).dtype)
        self.n_runs = n_runs
        self.cfg = cfg
        self.opts = model.make_optimizers(cfg.lr)
        self.gen = torch.Generator().manual_seed(stable_seed(cfg.seed, "client", client_id))

    def train(self, epochs: int) -> float:
        """Minibatch epochs over shuffled windows; returns the mean batch loss of the last epoch."""
        self.model.train()
        n, b = self.x.shape[0], self.cfg.batch_size
        mean = float("nan")
        for _ in range(epochs):
            order = torch.randperm(n, generator=self.gen)
            losses = [self.model.train_batch(self.x[order[i:i + b]], self.opts, self.gen)
                      for i in range(0, n, b)]
            mean = float(np.mean(losses))
        return mean


def _select(ids: list[int], r: int, cfg: FederationConfig) -> list[int]:
    k = cfg.clients_per_round
    if k is None or k >= len(ids):
        return ids
    rng = np.random.default_rng(stable_seed(cfg.seed, "select", r))
    return sorted(int(c) for c in rng.choice(ids, size=k, replace=False))


def run_federation(trainers: Mapping[int, LocalTrainer], policy: SharePolicy, cfg: FederationConfig,
                   on_round: Callable[[RoundLog], None] | None = None):
    """Run ``cfg.R`` rounds; returns the round logs (models are updated in place).

    Every selected client is overwritten with the global shared slice, trains
    ``E`` local epochs and uploads its shared slice; the server takes the
    run-count weighted mean.  With ``Independent`` nothing is exchanged.
    """
    policy = SharePolicy(policy)
    ids = sorted(trainers)
    partition = trainers[ids[0]].model.partition()
    names = partition.names(policy)
    layout = [(n, partition.sizes[n]) for n in names]
    for c in ids[1:]:
        other = trainers[c].model.partition()
        if [(n, other.sizes.get(n)) for n in other.names(policy)] != layout:
            raise ValueError(f"client {c} has a different shared-parameter layout")
    p_share = count_params(partition, policy)
    cost = comm_cost(p_share, cfg.R, len(ids), cfg.bandwidth_bps)
    global_state = shared_state(trainers[ids[0]].model, names) if names else {}

    logs, cumulative, history = [], 0, []
    for r in range(cfg.R):
        t0 = time.perf_counter()
        selected = _select(ids, r, cfg)
        if not selected:
            raise ValueError("empty client selection")
        losses, uploads = {}, {}
        for c in selected:
            tr = trainers[c]
            if names:
                broadcast(tr.model, global_state)
            losses[c] = tr.train(cfg.E)
            if names:
                uploads[c] = shared_state(tr.model, names)
        if names:
            global_state = aggregate(uploads, {c: trainers[c].n_runs for c in selected})
        per_client = BYTES_PER_PARAM * p_share if names else 0
        down = {c: per_client for c in selected}
        up = {c: per_client for c in selected}
        cumulative += sum(down.values()) + sum(up.values())
        log = RoundLog(r, losses, p_share, down, up, cumulative,
                       cost["t_comm_round_s"], state_checksum(global_state) if names else "",
                       time.perf_counter() - t0)
        logs.append(log)
        if on_round:
            on_round(log)
        history.append(float(np.mean(list(losses.values()))))
        if cfg.early_stop and _converged(history, cfg):
            break
    if names:
        for c in ids:
            broadcast(trainers[c].model, global_state)
    return logs


def _converged(history: list[float], cfg: FederationConfig) -> bool:
    p = cfg.early_stop_patience
    if len(history) <= p:
        return False
    recent = history[-(p + 1):]
    return all(abs(a - b) <= cfg.early_stop_tol * max(abs(a), 1e-12)
               for a, b in zip(recent[:-1], recent[1:]))


ROUNDS_HEADER = ["round", "client", "loss", "p_share", "bytes_down", "bytes_up",
                 "cumulative_bytes", "t_comm_s", "checksum"]


def round_rows(log: RoundLog) -> list[list]:
    return [[log.round, c, repr(log.losses[c]), log.p_share, log.bytes_down[c], log.bytes_up[c],
             log.cumulative_bytes, repr(log.t_comm_s), log.checksum] for c in sorted(log.losses)]


def comm_report_rows(C: int = 5, R: int = 30, bandwidth_bps: float = 1e7, built: dict | None = None):
    """Per-round traffic rows for every (family, policy), from the published counts.

    ``built`` optionally maps family -> ParamPartition so the counts of the
    instantiated models are reported alongside.
    """
    rows = []
    for family, by_policy in PUBLISHED_PARAMS.items():
        for policy, p in by_policy.items():
            cost = comm_cost(p, R, C, bandwidth_bps)
            row = {
                "model": family,
                "policy": policy.value,
                "shared_params": p,
                "download_mb": cost["download_bytes"] / 1e6,
                "upload_mb": cost["upload_bytes"] / 1e6,
                "total_round_mb": cost["v_round_bytes"] / 1e6,
                "total_gb": cost["v_total_bytes"] / 1e9,
                "latency_s": cost["t_comm_round_s"],
            }
            if built is not None:
                row["built_params"] = count_params(built[family], policy)
            rows.append(row)
    return rows
