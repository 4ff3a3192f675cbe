"""FedSW-TSAD: TCN autoencoder generator, TCN critic and an LSTM forecaster."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .base import GenerativeModel, _step, check_finite, gradient_penalty


@dataclass(frozen=True)
class FedswConfig:
    n_sensors: int = 10
    window: int = 20
    cond_len: int = 15
    pred_hidden: int = 128
    pred_layers: int = 2
    pred_head: int = 320
    enc_channels: tuple[int, ...] = (64, 128, 128)
    enc_dilations: tuple[int, ...] = (1, 2, 4)
    dec_channels: tuple[int, ...] = (128, 96, 32)
    dec_dilations: tuple[int, ...] = (4, 2, 1)
    disc_channels: tuple[int, ...] = (96, 128)
    disc_dilations: tuple[int, ...] = (1, 2)
    kernel: int = 3
    dropout: float = 0.1
    gp_weight: float = 10.0
    adv_weight: float = 0.01
    alpha: float = 0.35
    beta: float = 0.15
    gamma: float = 0.5

    def __post_init__(self):
        if abs(self.alpha + self.beta + self.gamma - 1.0) > 1e-9:
            raise ValueError("score weights alpha + beta + gamma must sum to 1")
        if not 0 < self.cond_len < self.window:
            raise ValueError("cond_len must lie strictly inside the window")

    @property
    def target_len(self) -> int:
        return self.window - self.cond_len


def split_window(x: torch.Tensor, cond_len: int):
    """``[B, K, W] -> ([B, K, cond_len], [B, K, W - cond_len])``."""
    return x[..., :cond_len], x[..., cond_len:]


class TemporalBlock(nn.Module):
    """Residual block of two dilated convolutions (length preserving)."""

    def __init__(self, c_in: int, c_out: int, kernel: int, dilation: int, dropout: float):
        super().__init__()
        pad = (kernel - 1) * dilation // 2
        self.conv1 = nn.Conv1d(c_in, c_out, kernel, padding=pad, dilation=dilation)
        self.conv2 = nn.Conv1d(c_out, c_out, kernel, padding=pad, dilation=dilation)
        self.drop = nn.Dropout(dropout)
        self.skip = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x):
        h = self.drop(torch.relu(self.conv1(x)))
        h = self.drop(torch.relu(self.conv2(h)))
        return torch.relu(h + self.skip(x))


def tcn(c_in: int, channels, dilations, kernel, dropout) -> nn.Sequential:
    layers = []
    for c, d in zip(channels, dilations):
        layers.append(TemporalBlock(c_in, c, kernel, d, dropout))
        c_in = c
    return nn.Sequential(*layers)


class TcnAutoencoder(nn.Module):
    def __init__(self, cfg: FedswConfig):
        super().__init__()
        self.encoder = tcn(cfg.n_sensors, cfg.enc_channels, cfg.enc_dilations, cfg.kernel, cfg.dropout)
        self.decoder = tcn(cfg.enc_channels[-1], cfg.dec_channels, cfg.dec_dilations, cfg.kernel, cfg.dropout)
        self.head = nn.Conv1d(cfg.dec_channels[-1], cfg.n_sensors, 1)

    def forward(self, x):
        return self.head(self.decoder(self.encoder(x)))


class TcnCritic(nn.Module):
    def __init__(self, cfg: FedswConfig):
        super().__init__()
        self.body = tcn(cfg.n_sensors, cfg.disc_channels, cfg.disc_dilations, cfg.kernel, cfg.dropout)
        self.out = nn.Linear(cfg.disc_channels[-1], 1)

    def forward(self, x):
        return self.out(self.body(x).mean(dim=-1)).squeeze(-1)


class Forecaster(nn.Module):
    """Predicts the last ``W - cond_len`` steps from the first ``cond_len`` steps."""

    def __init__(self, cfg: FedswConfig):
        super().__init__()
        self.k, self.horizon = cfg.n_sensors, cfg.target_len
        self.rnn = nn.LSTM(cfg.n_sensors, cfg.pred_hidden, num_layers=cfg.pred_layers,
                           batch_first=True, dropout=cfg.dropout if cfg.pred_layers > 1 else 0.0)
        self.head = nn.Sequential(nn.Linear(cfg.cond_len * cfg.pred_hidden, cfg.pred_head), nn.ReLU(),
                                  nn.Linear(cfg.pred_head, cfg.n_sensors * cfg.target_len))

    def forward(self, x_cond):
        h, _ = self.rnn(x_cond.transpose(1, 2))
        return self.head(h.flatten(1)).reshape(-1, self.k, self.horizon)


class FedswTsad(GenerativeModel):
    family = "fedsw_tsad"
    groups = {"discriminator": "analysis", "generator": "synthesis", "predictor": "auxiliary"}

    def __init__(self, cfg: FedswConfig = FedswConfig()):
        super().__init__()
        self.cfg = cfg
        self.discriminator = TcnCritic(cfg)
        self.generator = TcnAutoencoder(cfg)
        self.predictor = Forecaster(cfg)

    def config_dict(self) -> dict:
        return asdict(self.cfg)

    def make_optimizers(self, lr):
        return {name: torch.optim.Adam(getattr(self, name).parameters(), lr=lr)
                for name in ("discriminator", "generator", "predictor")}

    def train_batch(self, x, opts, gen):
        u = torch.rand(x.shape[0], generator=gen, dtype=x.dtype)
        _step(opts["discriminator"], fedsw_discriminator_loss(self, x, u), "discriminator loss")
        loss = _step(opts["generator"], fedsw_generator_loss(self, x), "generator loss")
        _step(opts["predictor"], fedsw_predictor_loss(self, x), "predictor loss")
        return loss

    @torch.no_grad()
    def score_windows(self, x, seed):
        c = self.cfg
        x_hat = self.generator(x)
        cond, tar = split_window(x, c.cond_len)
        recon = ((x - x_hat) ** 2).flatten(1).sum(dim=1)
        disc = (self.discriminator(x) - self.discriminator(x_hat)).abs()
        pred = ((tar - self.predictor(cond)) ** 2).flatten(1).sum(dim=1)
        score = c.alpha * recon + c.beta * disc + c.gamma * pred
        return check_finite(score, "FedSW score").cpu().numpy().astype(np.float64)


def fedsw_generator_loss(model: FedswTsad, x: torch.Tensor) -> torch.Tensor:
    x_hat = model.generator(x)
    recon = ((x - x_hat) ** 2).flatten(1).sum(dim=1).mean()
    return recon - model.cfg.adv_weight * model.discriminator(x_hat).mean()


def fedsw_discriminator_loss(model: FedswTsad, x: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    """WGAN-GP critic loss with reconstructions as the fake samples."""
    x_hat = model.generator(x).detach()
    penalty = check_finite(gradient_penalty(model.discriminator, x, x_hat, u), "gradient penalty")
    d = model.discriminator
    return d(x_hat).mean() - d(x).mean() + model.cfg.gp_weight * penalty


def fedsw_predictor_loss(model: FedswTsad, x: torch.Tensor) -> torch.Tensor:
    cond, tar = split_window(x, model.cfg.cond_len)
    return ((tar - model.predictor(cond)) ** 2).flatten(1).sum(dim=1).mean()


def fedsw_losses(model: FedswTsad, x: torch.Tensor, u: torch.Tensor):
    """``(generator_loss, discriminator_loss, predictor_loss)`` for one batch."""
    return (fedsw_generator_loss(model, x), fedsw_discriminator_loss(model, x, u),
            fedsw_predictor_loss(model, x))
