"""SWaT CSV ingestion with chronological five-way client partitioning.

The file is sorted by timestamp, cut at the first attack row into a
normal-operation prefix and the subsequent portion that contains attacks.
Both portions are split into ``C`` equal contiguous intervals; client ``c``
trains on normal interval ``c`` and validates/tests on the two chronological
halves of attack-era interval ``c``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..timeseries import ClientDataset, RunRecord

_NORMAL = {"normal", "0", "0.0", "false"}
_ATTACK = {"attack", "a ttack", "1", "1.0", "true"}


@dataclass(frozen=True)
class SwatPartitionConfig:
    csv_path: str = ""
    C: int = 5
    window: int = 20
    stride: int = 5
    val_fraction: float = 0.5
    label_column: str = "Normal/Attack"
    timestamp_column: str = "Timestamp"

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.C < 1:
            raise ValueError("C must be >= 1")


def _binary_labels(col: pd.Series) -> np.ndarray:
    text = col.astype(str).str.strip().str.lower()
    bad = sorted(set(text) - _NORMAL - _ATTACK)
    if bad:
        raise ValueError(f"non-binary labels in column {col.name!r}: {bad[:5]}")
    return text.isin(_ATTACK).to_numpy().astype(np.int8)


def _interval_bounds(n: int, parts: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, n, parts + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def _segment(x: np.ndarray, y: np.ndarray, run_id: str, client: int) -> RunRecord:
    tau = int(np.flatnonzero(y)[0]) if y.any() else None
    return RunRecord(x.T, y, tau, x.shape[0] - 1, run_id, client, persistent=False)


def load_swat(cfg: SwatPartitionConfig) -> dict[int, ClientDataset]:
    df = pd.read_csv(cfg.csv_path, skipinitialspace=True)
    df.columns = [str(c).strip() for c in df.columns]
    if cfg.label_column not in df.columns:
        raise ValueError(f"missing label column {cfg.label_column!r}")
    return partition_frame(df, cfg)


def partition_frame(df: pd.DataFrame, cfg: SwatPartitionConfig) -> dict[int, ClientDataset]:
    if cfg.label_column not in df.columns:
        raise ValueError(f"missing label column {cfg.label_column!r}")
    if cfg.timestamp_column in df.columns:
        ts = pd.to_datetime(df[cfg.timestamp_column].astype(str).str.strip(), errors="coerce",
                            format="mixed", dayfirst=True)
        if ts.isna().any():
            ts = pd.to_numeric(df[cfg.timestamp_column], errors="raise")
        df = df.assign(_ts=ts).sort_values("_ts", kind="mergesort").drop(columns="_ts")
    y = _binary_labels(df[cfg.label_column])
    sensor_cols = [c for c in df.columns if c not in (cfg.label_column, cfg.timestamp_column)]
    x = df[sensor_cols].apply(pd.to_numeric, errors="raise").to_numpy(dtype=np.float64)
    if not y.any():
        raise ValueError("no anomalous portion: the file contains no attack rows")
    cut = int(np.flatnonzero(y)[0])
    if cut == 0:
        raise ValueError("no normal-operation portion before the first attack")
    normal_x = x[:cut]
    attack_x, attack_y = x[cut:], y[cut:]

    clients = {}
    for c, ((n0, n1), (a0, a1)) in enumerate(zip(_interval_bounds(len(normal_x), cfg.C),
                                                  _interval_bounds(len(attack_x), cfg.C))):
        split = a0 + int(round((a1 - a0) * cfg.val_fraction))
        train = _segment(normal_x[n0:n1], np.zeros(n1 - n0, np.int8), f"swat-c{c}-train", c)
        val = _segment(attack_x[a0:split], attack_y[a0:split], f"swat-c{c}-val", c)
        test = _segment(attack_x[split:a1], attack_y[split:a1], f"swat-c{c}-test", c)
        clients[c] = ClientDataset(c, (train,), (val,), (test,), cfg.window, cfg.stride)
    return clients


def swat_row_ranges(n_rows_normal: int, n_rows_attack: int, C: int = 5, val_fraction: float = 0.5):
    """Row-index intervals per client: ``{c: {"train", "val", "test"}}`` over the sorted file."""
    out = {}
    for c, ((n0, n1), (a0, a1)) in enumerate(zip(_interval_bounds(n_rows_normal, C),
                                                  _interval_bounds(n_rows_attack, C))):
        split = a0 + int(round((a1 - a0) * val_fraction))
        off = n_rows_normal
        out[c] = {"train": (n0, n1), "val": (off + a0, off + split), "test": (off + split, off + a1)}
    return out

