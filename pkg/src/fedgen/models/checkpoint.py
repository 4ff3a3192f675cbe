"""Checkpoint directory: ``manifest.json`` plus one little-endian float32 file per parameter."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from . import FAMILIES, GenerativeModel

MANIFEST = "manifest.json"


def save_checkpoint(model: GenerativeModel, directory: Path, seed: int, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    part = model.partition()
    shapes = {}
    for name, p in model.named_parameters():
        arr = p.detach().cpu().numpy().astype("<f4")
        (directory / f"{name}.f32").write_bytes(arr.tobytes())
        shapes[name] = list(arr.shape)
    manifest = {
        "family": model.family,
        "config": model.config_dict(),
        "seed": seed,
        "partition": {"analysis": list(part.analysis), "synthesis": list(part.synthesis),
                      "auxiliary": list(part.auxiliary)},
        "shapes": shapes,
        **(extra or {}),
    }
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(directory: Path, dtype: torch.dtype = torch.float32):
    """Returns ``(model, manifest)``."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    model_cls, cfg_cls = FAMILIES[manifest["family"]]
    cfg = cfg_cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in manifest["config"].items()})
    model = model_cls(cfg).to(dtype)
    params = dict(model.named_parameters())
    if set(params) != set(manifest["shapes"]):
        raise ValueError(f"{directory}: parameter names do not match the {manifest['family']} layout")
    with torch.no_grad():
        for name, shape in manifest["shapes"].items():
            arr = np.frombuffer((directory / f"{name}.f32").read_bytes(), dtype="<f4").reshape(shape)
            params[name].copy_(torch.from_numpy(arr.copy()))
    return model, manifest
