"""Runs, windows and per-client normalization.

A run is one machine life: a ``[K, L]`` sensor matrix sampled once per atu,
per-timestep labels and the (optional) change point ``tau``.  Everything here
is an immutable value type; arrays are copied and frozen on construction.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

STD_FLOOR = 1e-8


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def persistent_labels(length: int, tau: int | None) -> np.ndarray:
    """Labels of a single persistent change point: ``y[t] = 1[t >= tau]``."""
    y = np.zeros(length, dtype=np.int8)
    if tau is not None:
        y[tau:] = 1
    return y


@dataclass(frozen=True)
class RunRecord:
    """One run of one machine.

    ``persistent=False`` is reserved for benchmark data (SWaT) whose attack
    labels come and go; the persistent-label rule is only enforced otherwise.
    """

    sensors: np.ndarray
    labels: np.ndarray
    tau: int | None
    t_life: int
    run_id: str
    client_id: int
    persistent: bool = True

    def __post_init__(self):
        sensors = _frozen(self.sensors, np.float64)
        labels = _frozen(self.labels, np.int8)
        if sensors.ndim != 2:
            raise ValueError(f"{self.run_id}: sensors must be [K, L], got shape {sensors.shape}")
        L = sensors.shape[1]
        if labels.shape != (L,):
            raise ValueError(f"{self.run_id}: labels length {labels.shape} != run length {L}")
        if L != self.t_life + 1:
            raise ValueError(f"{self.run_id}: run length {L} must equal t_life + 1 = {self.t_life + 1}")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError(f"{self.run_id}: labels must be binary")
        if self.tau is not None and not 0 <= self.tau <= self.t_life:
            raise ValueError(f"{self.run_id}: tau={self.tau} outside [0, t_life={self.t_life}]")
        if self.persistent and not np.array_equal(labels, persistent_labels(L, self.tau)):
            raise ValueError(f"{self.run_id}: labels do not follow the persistent rule for tau={self.tau}")
        object.__setattr__(self, "sensors", sensors)
        object.__setattr__(self, "labels", labels)

    @property
    def n_sensors(self) -> int:
        return self.sensors.shape[0]

    @property
    def length(self) -> int:
        return self.sensors.shape[1]

    def with_sensors(self, sensors: np.ndarray) -> "RunRecord":
        return RunRecord(sensors, self.labels, self.tau, self.t_life, self.run_id,
                         self.client_id, self.persistent)


@dataclass(frozen=True)
class SensorWindow:
    data: np.ndarray
    start_t: int
    run_id: str

    @property
    def size(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR)
        object.__setattr__(self, "mean", _frozen(self.mean, np.float64))
        object.__setattr__(self, "std", _frozen(std, np.float64))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]))


def window_starts(length: int, size: int, stride: int) -> np.ndarray:
    """Start times of the windows :func:`windowize` produces for a run of ``length``."""
    if size < 1 or stride < 1:
        raise ValueError("size and stride must be positive")
    if length < size:
        raise ValueError(f"run too short: length {length} < window size {size}")
    starts = list(range(0, length - size + 1, stride))
    if starts[-1] + size < length:
        starts.append(length - size)
    return np.asarray(starts, dtype=np.int64)


def windowize(run: RunRecord, size: int = 20, stride: int = 5) -> list[SensorWindow]:
    """Cut a run into partially overlapping windows.

    A tail window ending exactly at ``L - 1`` is appended when the regular
    grid does not reach the last timestep, so the end of every run is scored.
    """
    return [SensorWindow(run.sensors[:, s:s + size], int(s), run.run_id)
            for s in window_starts(run.length, size, stride)]


def window_array(run: RunRecord, size: int = 20, stride: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Stacked ``[N, K, W]`` windows plus their start times (fast path of :func:`windowize`)."""
    starts = window_starts(run.length, size, stride)
    idx = starts[:, None] + np.arange(size)[None, :]
    data = np.transpose(run.sensors[:, idx], (1, 0, 2))
    return np.ascontiguousarray(data), starts


def stack_windows(runs: Iterable[RunRecord], size: int = 20, stride: int = 5) -> np.ndarray:
    arrays = [window_array(r, size, stride)[0] for r in runs]
    if not arrays:
        raise ValueError("no runs to window")
    return np.concatenate(arrays, axis=0)


def fit_normalization(train_runs: Sequence[RunRecord]) -> NormalizationStats:
    if len(train_runs) == 0:
        raise ValueError("fit_normalization needs at least one training run")
    x = np.concatenate([r.sensors for r in train_runs], axis=1)
    return NormalizationStats(x.mean(axis=1), x.std(axis=1))


def apply_normalization(run: RunRecord, stats: NormalizationStats) -> RunRecord:
    z = (run.sensors - stats.mean[:, None]) / stats.std[:, None]
    return run.with_sensors(z)


def invert_normalization(run: RunRecord, stats: NormalizationStats) -> RunRecord:
    x = run.sensors * stats.std[:, None] + stats.mean[:, None]
    return run.with_sensors(x)


@dataclass(frozen=True)
class ClientDataset:
    """Train (normal-only) / validation / test runs of one client."""

    client_id: int
    train: tuple[RunRecord, ...]
    val: tuple[RunRecord, ...]
    test: tuple[RunRecord, ...]
    window: int = 20
    stride: int = 5

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def normalized(self, stats: NormalizationStats | None = None) -> "ClientDataset":
        """Apply ``stats`` (fitted on this client's training runs by default) to every split."""
        stats = stats or fit_normalization(self.train)
        return ClientDataset(
            self.client_id,
            tuple(apply_normalization(r, stats) for r in self.train),
            tuple(apply_normalization(r, stats) for r in self.val),
            tuple(apply_normalization(r, stats) for r in self.test),
            self.window, self.stride,
        )

    def train_windows(self) -> np.ndarray:
        return stack_windows(self.train, self.window, self.stride)

    @property
    def n_train(self) -> int:
        return len(self.train)

    def runs(self):
        yield from self.train
        yield from self.val
        yield from self.test


# -- run serialization: one CSV (t, s1..sK, label) + JSON sidecar per run ----------


def write_run(run: RunRecord, directory: Path) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{run.run_id}.csv"
    K = run.n_sensors
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *[f"s{k + 1}" for k in range(K)], "label"])
        for t in range(run.length):
            w.writerow([t, *[repr(float(v)) for v in run.sensors[:, t]], int(run.labels[t])])
    meta_path = directory / f"{run.run_id}.json"
    meta = {"run_id": run.run_id, "client_id": run.client_id, "tau": run.tau,
            "t_life": run.t_life, "persistent": run.persistent}
    meta_path.write_text(json.dumps(meta, sort_keys=True) + "\n")
    return csv_path, meta_path


def read_run(csv_path: Path) -> RunRecord:
    csv_path = Path(csv_path)
    meta = json.loads(csv_path.with_suffix(".json").read_text())
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "t" or header[-1] != "label":
        raise ValueError(f"{csv_path}: expected columns t, s1..sK, label")
    arr = np.asarray(body, dtype=np.float64)
    return RunRecord(
        sensors=arr[:, 1:-1].T,
        labels=arr[:, -1].astype(np.int8),
        tau=meta["tau"],
        t_life=int(meta["t_life"]),
        run_id=meta["run_id"],
        client_id=int(meta["client_id"]),
        persistent=bool(meta.get("persistent", True)),
    )
