"""On-disk dataset layout.

    <root>/dataset.json
    <root>/client_<c>/<split>/<run_id>.csv  (+ .json sidecar)

``dataset.json`` echoes the generating config and records a SHA-256 of
every file so a loaded dataset can be checked against what was written.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from ..timeseries import ClientDataset, read_run, write_run

SPLITS = ("train", "val", "test")
MANIFEST = "dataset.json"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_dataset(fleet: dict[int, ClientDataset], root: Path, source: dict) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    files = {}
    clients = {}
    for c in sorted(fleet):
        ds = fleet[c]
        clients[str(c)] = {"window": ds.window, "stride": ds.stride,
                           **{s: [r.run_id for r in getattr(ds, s)] for s in SPLITS}}
        for split in SPLITS:
            for run in getattr(ds, split):
                for p in write_run(run, root / f"client_{c}" / split):
                    files[p.relative_to(root).as_posix()] = _sha256(p)
    manifest = {"source": source, "clients": clients, "files": dict(sorted(files.items()))}
    path = root / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(root: Path, verify: bool = True) -> dict[int, ClientDataset]:
    root = Path(root)
    path = root / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    manifest = json.loads(path.read_text())
    if verify:
        for rel, digest in manifest["files"].items():
            if _sha256(root / rel) != digest:
                raise ValueError(f"content hash mismatch for {rel}")
    fleet = {}
    for key, info in manifest["clients"].items():
        c = int(key)
        splits = {s: tuple(read_run(root / f"client_{c}" / s / f"{rid}.csv") for rid in info[s])
                  for s in SPLITS}
        fleet[c] = ClientDataset(c, splits["train"], splits["val"], splits["test"],
                                 info["window"], info["stride"])
    return fleet


def dataset_source(root: Path) -> dict:
    return json.loads((Path(root) / MANIFEST).read_text())["source"]
