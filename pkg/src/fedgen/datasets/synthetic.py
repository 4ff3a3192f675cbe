"""Parametric degradation fleet, a stand-in for proprietary run-to-failure data.

Each client owns a latent degradation process

    D(t) = drift * t + amp * sin(2 pi t / period + phase) + sigma_B * B(t)

with client-specific drift and seasonal parameters (the source of non-IID
heterogeneity).  A run becomes anomalous at ``tau`` (first ``D >= d_f``) and
fails at ``T_f`` (first ``D >= d_fail``); it is recorded up to
``t_life = min(T, T_f)``.  Sensors follow a client-specific seasonal baseline
plus a fluctuating operating load that couples into the sensors along the
direction of one of ``n_modes`` fleet-wide operating modes.  Healthy training
runs of client ``c`` only ever run in mode ``c mod n_modes`` while monitored
(val/test) runs use any mode, so no single site sees every normal regime.
After ``tau`` every sensor additionally responds to the excess degradation
``D - d_f`` and gets noisier.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import lfilter

from ..timeseries import ClientDataset, RunRecord, persistent_labels


@dataclass(frozen=True)
class FleetConfig:
    C: int = 5
    K: int = 10
    T: int = 1000
    n_train: int = 30
    n_val: int = 65
    n_test: int = 65
    d_f: float = 1.0
    d_fail: float = 1.6
    drift_range: tuple[float, float] = (1.3e-3, 2.4e-3)
    season_amp_range: tuple[float, float] = (0.05, 0.2)
    season_period_range: tuple[float, float] = (150.0, 400.0)
    season_phase_range: tuple[float, float] = (0.0, 2 * math.pi)
    brownian_std: float = 0.004
    noise_std: float = 0.1
    sensor_base_range: tuple[float, float] = (-1.0, 1.0)
    sensor_amp_range: tuple[float, float] = (0.3, 1.0)
    anomaly_gain_range: tuple[float, float] = (1.0, 3.0)
    noise_inflation: float = 2.0
    load_std: float = 2.0
    load_corr: float = 0.95
    n_modes: int = 3
    window: int = 20
    stride: int = 5
    seed: int = 0

    def __post_init__(self):
        errors = []
        for name in ("C", "K", "T", "n_train", "n_val", "n_test", "window", "stride"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if not self.d_fail > self.d_f > 0:
            errors.append("need d_fail > d_f > 0")
        for name in ("drift_range", "season_amp_range", "season_period_range",
                     "season_phase_range", "sensor_base_range", "sensor_amp_range",
                     "anomaly_gain_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                errors.append(f"{name}: lower bound {lo} > upper bound {hi}")
        if self.season_period_range[0] <= 0:
            errors.append("season periods must be positive")
        if not 0 <= self.load_corr < 1:
            errors.append("load_corr must lie in [0, 1)")
        if self.n_modes < 1:
            errors.append("n_modes must be >= 1")
        for name in ("brownian_std", "noise_std", "load_std"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0")
        if self.noise_inflation < 1:
            errors.append("noise_inflation must be >= 1")
        if self.window > self.T + 1:
            errors.append("window longer than the design horizon")
        if errors:
            raise ValueError("invalid FleetConfig: " + "; ".join(errors))

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass(frozen=True)
class ClientProcess:
    """Client-level parameters drawn once per client."""

    drift: float
    amp: float
    period: float
    phase: float
    base: np.ndarray
    sensor_amp: np.ndarray
    gain: np.ndarray
    modes: np.ndarray  # [n_modes, K] unit load-coupling directions shared by the fleet
    train_mode: int


def _uniform(rng: np.random.Generator, bounds, size=None):
    lo, hi = bounds
    return rng.uniform(lo, hi, size) if hi > lo else np.full(size, lo) if size else lo


def fleet_modes(cfg: FleetConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 0x6d6f646573])
    modes = rng.normal(size=(cfg.n_modes, cfg.K))
    return modes / np.linalg.norm(modes, axis=1, keepdims=True)


def client_process(cfg: FleetConfig, rng: np.random.Generator, client_id: int = 0) -> ClientProcess:
    K = cfg.K
    sign = rng.choice((-1.0, 1.0), size=K)
    return ClientProcess(
        drift=float(_uniform(rng, cfg.drift_range)),
        amp=float(_uniform(rng, cfg.season_amp_range)),
        period=float(_uniform(rng, cfg.season_period_range)),
        phase=float(_uniform(rng, cfg.season_phase_range)),
        base=np.asarray(_uniform(rng, cfg.sensor_base_range, K), dtype=float),
        sensor_amp=np.asarray(_uniform(rng, cfg.sensor_amp_range, K), dtype=float),
        gain=sign * np.asarray(_uniform(rng, cfg.anomaly_gain_range, K), dtype=float),
        modes=fleet_modes(cfg),
        train_mode=client_id % cfg.n_modes,
    )


def degradation_path(cfg: FleetConfig, proc: ClientProcess, rng: np.random.Generator) -> np.ndarray:
    """Latent degradation ``D(t)`` for ``t = 0..T``."""
    t = np.arange(cfg.T + 1, dtype=float)
    season = proc.amp * np.sin(2 * np.pi * t / proc.period + proc.phase)
    steps = rng.normal(0.0, cfg.brownian_std, cfg.T)
    brownian = np.concatenate([[0.0], np.cumsum(steps)])
    return proc.drift * t + season + brownian


def _first_crossing(d: np.ndarray, level: float) -> int | None:
    hit = np.flatnonzero(d >= level)
    return int(hit[0]) if hit.size else None


def ar1(rng: np.random.Generator, n: int, std: float, rho: float) -> np.ndarray:
    """Stationary AR(1) path with marginal standard deviation ``std``."""
    eta = rng.normal(0.0, std, n)
    k = np.sqrt(1 - rho ** 2)
    out, _ = lfilter([k], [1.0, -rho], eta, zi=[(1 - k) * eta[0]])
    return out


def simulate_run(cfg: FleetConfig, proc: ClientProcess, rng: np.random.Generator,
                 run_id: str, client_id: int, inject: bool = True) -> RunRecord:
    """One run; with ``inject=False`` the machine stays healthy in its training mode."""
    K, T = cfg.K, cfg.T
    if inject:
        d = degradation_path(cfg, proc, rng)
        tau = _first_crossing(d, cfg.d_f)
        t_fail = _first_crossing(d, cfg.d_fail)
    else:
        d, tau, t_fail = None, None, None
    t_life = T if t_fail is None else min(T, t_fail)
    L = t_life + 1
    t = np.arange(L, dtype=float)
    mode = proc.train_mode if not inject else int(rng.integers(len(proc.modes)))
    load = ar1(rng, L, cfg.load_std, cfg.load_corr)
    season = np.sin(2 * np.pi * t / proc.period + proc.phase)
    x = (proc.base[:, None] + proc.sensor_amp[:, None] * season[None, :]
         + proc.modes[mode][:, None] * load[None, :])
    noise = rng.normal(0.0, cfg.noise_std, (K, L))
    if tau is not None:
        excess = np.clip(d[:L] - cfg.d_f, 0.0, None)
        post = t >= tau
        x[:, post] += proc.gain[:, None] * excess[None, post]
        noise[:, post] *= cfg.noise_inflation
    x += noise
    return RunRecord(x, persistent_labels(L, tau), tau, t_life, run_id, client_id)


def generate_client(cfg: FleetConfig, client_id: int) -> ClientDataset:
    rng = np.random.default_rng(cfg.seed + client_id)
    proc = client_process(cfg, rng, client_id)
    splits = {}
    for split, n, inject in (("train", cfg.n_train, False), ("val", cfg.n_val, True),
                             ("test", cfg.n_test, True)):
        splits[split] = tuple(
            simulate_run(cfg, proc, rng, f"c{client_id}-{split}-{i:03d}", client_id, inject)
            for i in range(n)
        )
    return ClientDataset(client_id, splits["train"], splits["val"], splits["test"],
                         cfg.window, cfg.stride)


def generate_fleet(cfg: FleetConfig) -> dict[int, ClientDataset]:
    """Generate all clients; client ``c`` draws from its own stream seeded ``seed + c``."""
    return {c: generate_client(cfg, c) for c in range(cfg.C)}


def anomalous_fraction(fleet: dict[int, ClientDataset]) -> float:
    """Fraction of validation/test runs that have a defined change point."""
    runs = [r for ds in fleet.values() for r in (*ds.val, *ds.test)]
    return sum(r.tau is not None for r in runs) / len(runs)
