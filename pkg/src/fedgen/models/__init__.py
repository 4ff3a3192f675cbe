from .base import GenerativeModel, ParamPartition, SharePolicy, count_params, stable_seed
from .ddpm import DdpmConfig, TanoDdpm
from .fedsw import FedswConfig, FedswTsad
from .vae import LstmVae, VaeConfig
from .wgan import TanoWgan, WganConfig

FAMILIES = {
    "lstm_vae": (LstmVae, VaeConfig),
    "tano_wgan": (TanoWgan, WganConfig),
    "fedsw_tsad": (FedswTsad, FedswConfig),
    "tano_ddpm": (TanoDdpm, DdpmConfig),
}


def build_model(family: str, overrides: dict | None = None, n_sensors: int = 10,
                window: int = 20) -> GenerativeModel:
    """Instantiate a family with its default config, patched by ``overrides``."""
    if family not in FAMILIES:
        raise ValueError(f"unknown model family {family!r}; expected one of {sorted(FAMILIES)}")
    model_cls, cfg_cls = FAMILIES[family]
    kw = {"n_sensors": n_sensors, "window": window}
    for k, v in (overrides or {}).items():
        kw[k] = tuple(v) if isinstance(v, list) else v
    return model_cls(cfg_cls(**kw))


__all__ = [
    "FAMILIES", "DdpmConfig", "FedswConfig", "FedswTsad", "GenerativeModel", "LstmVae",
    "ParamPartition", "SharePolicy", "TanoDdpm", "TanoWgan", "VaeConfig", "WganConfig",
    "build_model", "count_params", "stable_seed",
]
