"""Experiment configuration: YAML loading, validation and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .datasets.swat import SwatPartitionConfig
from .datasets.synthetic import FleetConfig
from .evaluation import CostConfig
from .federation import FederationConfig
from .models import FAMILIES
from .models.base import SharePolicy

SCENARIOS = {
    "centralized": SharePolicy.INDEPENDENT,
    "independent": SharePolicy.INDEPENDENT,
    "fed_full": SharePolicy.FULL,
    "fed_analysis": SharePolicy.ANALYSIS,
    "fed_synthesis": SharePolicy.SYNTHESIS,
}

DETECTION_DEFAULTS = {"calibration_budget": 50, "m_consecutive": 1, "objective": None}
TOP_KEYS = {"scenario", "model_family", "model", "dataset", "federation", "detection",
            "evaluation", "output_dir", "seed", "matrix"}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid config:\n  " + "\n  ".join(errors))


def _dataclass_keys(cls) -> set[str]:
    return {f.name for f in fields(cls)}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "fed_full"
    model_family: str = "lstm_vae"
    model: dict = field(default_factory=dict)
    dataset_kind: str = "synthetic"
    fleet: FleetConfig | None = None
    swat: SwatPartitionConfig | None = None
    federation: FederationConfig = FederationConfig()
    detection: dict = field(default_factory=lambda: dict(DETECTION_DEFAULTS))
    evaluation: CostConfig = CostConfig()
    output_dir: str = "runs/experiment"
    seed: int = 0
    matrix: dict = field(default_factory=dict)

    @property
    def policy(self) -> SharePolicy:
        return SCENARIOS[self.scenario]

    @property
    def model_overrides(self) -> dict:
        """Overrides for ``model_family``; ``model`` may also be keyed by family."""
        if self.model and set(self.model) <= set(FAMILIES):
            return dict(self.model.get(self.model_family) or {})
        return dict(self.model)

    @property
    def objective(self) -> str:
        obj = self.detection.get("objective")
        return obj or ("f1" if self.dataset_kind == "swat" else "offset")

    def to_dict(self) -> dict:
        ds = ({"synthetic": self.fleet.to_dict()} if self.dataset_kind == "synthetic"
              else {"swat": dict(vars(self.swat))})
        return {
            "scenario": self.scenario,
            "model_family": self.model_family,
            "model": dict(sorted(self.model.items())),
            "dataset": ds,
            "federation": dict(vars(self.federation)),
            "detection": dict(self.detection),
            "evaluation": dict(vars(self.evaluation)),
            "output_dir": self.output_dir,
            "seed": self.seed,
            "matrix": self.matrix,
        }

    def hash(self) -> str:
        """SHA-256 of the canonical config, ignoring where outputs are written."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("matrix")
        d["model"] = dict(sorted(self.model_overrides.items()))
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_updates(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(kw)
        return parse_config(d)


def _check_keys(section: str, given: dict, allowed: set[str], errors: list[str]) -> None:
    for k in sorted(set(given) - allowed):
        errors.append(f"{section}.{k}: unknown key" if section else f"{k}: unknown key")


def _build(cls, section: str, values: dict, errors: list[str], **extra):
    if not isinstance(values, dict):
        errors.append(f"{section}: expected a mapping")
        return None
    allowed = _dataclass_keys(cls)
    _check_keys(section, values, allowed, errors)
    kw = {}
    for f in fields(cls):
        if f.name not in values:
            continue
        v = values[f.name]
        default = f.default
        if isinstance(default, tuple):
            if not isinstance(v, (list, tuple)):
                errors.append(f"{section}.{f.name}: expected a list")
                continue
            v = tuple(v)
        elif isinstance(default, bool):
            if not isinstance(v, bool):
                errors.append(f"{section}.{f.name}: expected a boolean")
                continue
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(v, bool) or not isinstance(v, int):
                errors.append(f"{section}.{f.name}: expected an integer")
                continue
        elif isinstance(default, float):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                errors.append(f"{section}.{f.name}: expected a number")
                continue
            v = float(v)
        kw[f.name] = v
    kw.update(extra)
    try:
        return cls(**kw)
    except (ValueError, TypeError) as exc:
        errors.append(f"{section}: {exc}")
        return None


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a raw mapping; every problem is collected before raising."""
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])
    raw = copy.deepcopy(raw)
    errors: list[str] = []
    _check_keys("", raw, TOP_KEYS, errors)

    scenario = raw.get("scenario", "fed_full")
    if scenario not in SCENARIOS:
        errors.append(f"scenario: {scenario!r} not in {sorted(SCENARIOS)}")
    family = raw.get("model_family", "lstm_vae")
    if family not in FAMILIES:
        errors.append(f"model_family: {family!r} not in {sorted(FAMILIES)}")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.append("seed: expected a non-negative integer")
        seed = 0

    model = raw.get("model") or {}
    if not isinstance(model, dict):
        errors.append("model: expected a mapping of config overrides")
        model = {}
    elif model and set(model) <= set(FAMILIES):
        for fam, sub in model.items():
            allowed = _dataclass_keys(FAMILIES[fam][1]) - {"n_sensors", "window"}
            _check_keys(f"model.{fam}", sub or {}, allowed, errors)
    elif family in FAMILIES:
        allowed = _dataclass_keys(FAMILIES[family][1]) - {"n_sensors", "window"}
        _check_keys("model", model, allowed, errors)

    dataset = raw.get("dataset") or {"synthetic": {}}
    fleet = swat = None
    kind = "synthetic"
    if not isinstance(dataset, dict) or len(dataset) != 1 or next(iter(dataset)) not in ("synthetic", "swat"):
        errors.append("dataset: expected exactly one of 'synthetic' or 'swat'")
    else:
        kind, values = next(iter(dataset.items()))
        values = values or {}
        if kind == "synthetic":
            if isinstance(values, dict) and "seed" not in values:
                values = {**values, "seed": seed}
            fleet = _build(FleetConfig, "dataset.synthetic", values, errors)
        else:
            swat = _build(SwatPartitionConfig, "dataset.swat", values, errors)
            if swat is not None and not swat.csv_path:
                errors.append("dataset.swat.csv_path: required")

    fed_raw = raw.get("federation") or {}
    if isinstance(fed_raw, dict) and "seed" not in fed_raw:
        fed_raw = {**fed_raw, "seed": seed}
    federation = _build(FederationConfig, "federation", fed_raw, errors)

    det = {**DETECTION_DEFAULTS, **(raw.get("detection") or {})}
    _check_keys("detection", det, set(DETECTION_DEFAULTS), errors)
    if not isinstance(det.get("calibration_budget"), int) or det["calibration_budget"] < 1:
        errors.append("detection.calibration_budget: expected an integer >= 1")
    if not isinstance(det.get("m_consecutive"), int) or det["m_consecutive"] < 1:
        errors.append("detection.m_consecutive: expected an integer >= 1")
    if det.get("objective") not in (None, "offset", "f1"):
        errors.append("detection.objective: expected 'offset' or 'f1'")

    evaluation = _build(CostConfig, "evaluation", raw.get("evaluation") or {}, errors)

    output_dir = raw.get("output_dir", "runs/experiment")
    if not isinstance(output_dir, str) or not output_dir:
        errors.append("output_dir: expected a non-empty path string")

    matrix = raw.get("matrix") or {}
    if not isinstance(matrix, dict):
        errors.append("matrix: expected a mapping")
        matrix = {}
    else:
        _check_keys("matrix", matrix, {"scenarios", "families"}, errors)
        for s in matrix.get("scenarios", []):
            if s not in SCENARIOS:
                errors.append(f"matrix.scenarios: unknown scenario {s!r}")
        for f in matrix.get("families", []):
            if f not in FAMILIES:
                errors.append(f"matrix.families: unknown family {f!r}")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(scenario, family, model, kind, fleet, swat, federation, det,
                            evaluation, output_dir, seed, matrix)


def load_config(path: Path, seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file {path} not found"])
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"cannot parse {path}: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])
    if seed is not None:
        raw["seed"] = seed
        for section, sub in (("federation", None), ("dataset", "synthetic")):
            node = raw.get(section)
            if sub:
                node = node.get(sub) if isinstance(node, dict) else None
            if isinstance(node, dict):
                node.pop("seed", None)
    if output_dir is not None:
        raw["output_dir"] = output_dir
    return parse_config(raw)
