"""LSTM variational autoencoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .base import GenerativeModel, LstmStack, _step, check_finite


@dataclass(frozen=True)
class VaeConfig:
    n_sensors: int = 10
    window: int = 20
    enc_hidden: tuple[int, ...] = (256, 128)
    dec_hidden: tuple[int, ...] = (128, 256)
    latent: int = 5
    layer_norm: bool = True


def kl_standard_normal(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Per-sample ``KL(N(mu, diag sigma^2) || N(0, I))``."""
    return 0.5 * (mu ** 2 + logvar.exp() - 1.0 - logvar).sum(dim=-1)


def reparameterize(mu: torch.Tensor, logvar: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    return mu + torch.exp(0.5 * logvar) * eps


class VaeEncoder(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.rnn = LstmStack(cfg.n_sensors, cfg.enc_hidden, 0 if cfg.layer_norm else None)
        self.mu = nn.Linear(cfg.enc_hidden[-1], cfg.latent)
        self.logvar = nn.Linear(cfg.enc_hidden[-1], cfg.latent)

    def forward(self, x: torch.Tensor):
        h = self.rnn(x.transpose(1, 2))[:, -1]
        return self.mu(h), self.logvar(h)


class VaeDecoder(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.window = cfg.window
        # mirror of the encoder: the normalized layer is the wide one
        self.rnn = LstmStack(cfg.latent, cfg.dec_hidden,
                             len(cfg.dec_hidden) - 1 if cfg.layer_norm else None)
        self.out = nn.Linear(cfg.dec_hidden[-1], cfg.n_sensors)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        seq = z[:, None, :].expand(-1, self.window, -1)
        return self.out(self.rnn(seq)).transpose(1, 2)


class LstmVae(GenerativeModel):
    family = "lstm_vae"
    groups = {"encoder": "analysis", "decoder": "synthesis"}

    def __init__(self, cfg: VaeConfig = VaeConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = VaeEncoder(cfg)
        self.decoder = VaeDecoder(cfg)

    def config_dict(self) -> dict:
        return asdict(self.cfg)

    def reconstruct(self, x: torch.Tensor) -> torch.Tensor:
        """Deterministic reconstruction decoded from the posterior mean."""
        mu, _ = self.encoder(x)
        return self.decoder(mu)

    def train_batch(self, x, opts, gen):
        eps = torch.randn(x.shape[0], self.cfg.latent, generator=gen, dtype=x.dtype)
        return _step(opts["all"], vae_loss(self, x, eps), "VAE loss")

    @torch.no_grad()
    def score_windows(self, x, seed):
        err = (x - self.reconstruct(x)) ** 2
        return err.flatten(1).sum(dim=1).cpu().numpy().astype(np.float64)


def vae_loss(model: LstmVae, x: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Negative ELBO with a unit-variance Gaussian decoder, averaged over the batch."""
    mu, logvar = model.encoder(x)
    x_hat = model.decoder(reparameterize(mu, logvar, eps))
    recon = 0.5 * ((x - x_hat) ** 2).flatten(1).sum(dim=1)
    return check_finite((recon + kl_standard_normal(mu, logvar)).mean(), "VAE loss")
