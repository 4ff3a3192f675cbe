"""TAnoWGAN: LSTM generator and critic trained with WGAN-GP, scored by latent inversion."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .base import GenerativeModel, LstmStack, _step, check_finite, gradient_penalty


@dataclass(frozen=True)
class WganConfig:
    n_sensors: int = 10
    window: int = 20
    gen_hidden: tuple[int, ...] = (256, 128)
    critic_hidden: tuple[int, ...] = (256, 128)
    latent: int = 20
    gp_weight: float = 10.0
    n_critic: int = 5
    score_gamma: float = 0.1
    inversion_steps: int = 1500
    inversion_lr: float = 1e-2
    layer_norm: bool = True

    def __post_init__(self):
        if self.gp_weight < 0:
            raise ValueError("gp_weight must be >= 0")
        if not 0 <= self.score_gamma <= 1:
            raise ValueError("score_gamma must lie in [0, 1]")


class Critic(nn.Module):
    def __init__(self, cfg: WganConfig):
        super().__init__()
        self.rnn = LstmStack(cfg.n_sensors, cfg.critic_hidden, 0 if cfg.layer_norm else None)
        self.out = nn.Linear(cfg.critic_hidden[-1], 1)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Feature map h(x): last hidden layer activations over all timesteps."""
        return self.rnn(x.transpose(1, 2))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(self.features(x)[:, -1]).squeeze(-1)


class Generator(nn.Module):
    def __init__(self, cfg: WganConfig):
        super().__init__()
        self.window = cfg.window
        self.rnn = LstmStack(cfg.latent, cfg.gen_hidden, 0 if cfg.layer_norm else None)
        self.out = nn.Linear(cfg.gen_hidden[-1], cfg.n_sensors)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        seq = z[:, None, :].expand(-1, self.window, -1)
        return self.out(self.rnn(seq)).transpose(1, 2)


def wgan_losses(critic, generator, x_real, z, u, gp_weight: float = 10.0):
    """``(critic_loss, generator_loss, penalty)`` for one batch.

    The penalty is built with ``create_graph=True`` so the critic loss can be
    differentiated with respect to the critic parameters through it.
    """
    fake = generator(z)
    f_fake = critic(fake)
    penalty = gradient_penalty(critic, x_real, fake.detach(), u)
    check_finite(penalty, "gradient penalty")
    critic_loss = critic(fake.detach()).mean() - critic(x_real).mean() + gp_weight * penalty
    generator_loss = -f_fake.mean()
    return critic_loss, generator_loss, penalty


class TanoWgan(GenerativeModel):
    family = "tano_wgan"
    groups = {"critic": "analysis", "generator": "synthesis"}

    def __init__(self, cfg: WganConfig = WganConfig()):
        super().__init__()
        self.cfg = cfg
        self.critic = Critic(cfg)
        self.generator = Generator(cfg)
        self._batches = 0

    def config_dict(self) -> dict:
        return asdict(self.cfg)

    def make_optimizers(self, lr):
        return {"critic": torch.optim.Adam(self.critic.parameters(), lr=lr, betas=(0.5, 0.9)),
                "generator": torch.optim.Adam(self.generator.parameters(), lr=lr, betas=(0.5, 0.9))}

    def train_batch(self, x, opts, gen):
        """One critic update per batch; the generator updates every ``n_critic`` batches."""
        b = x.shape[0]
        z = torch.randn(b, self.cfg.latent, generator=gen, dtype=x.dtype)
        u = torch.rand(b, generator=gen, dtype=x.dtype)
        c_loss, _, _ = wgan_losses(self.critic, self.generator, x, z, u, self.cfg.gp_weight)
        loss = _step(opts["critic"], c_loss, "critic loss")
        self._batches += 1
        if self._batches % self.cfg.n_critic == 0:
            z = torch.randn(b, self.cfg.latent, generator=gen, dtype=x.dtype)
            g_loss = -self.critic(self.generator(z)).mean()
            _step(opts["generator"], g_loss, "generator loss")
        return loss

    def inversion_objective(self, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """Per-window ``(1-g)||x - G(z)||^2 + g||h(x) - h(G(z))||^2``.

        Squared norms keep the objective smooth at the optimum, so Adam settles
        instead of oscillating with an amplitude of about the learning rate.
        """
        g = self.cfg.score_gamma
        x_gen = self.generator(z)
        residual = ((x - x_gen) ** 2).flatten(1).sum(dim=1)
        with torch.no_grad():
            h_real = self.critic.features(x)
        disc = ((h_real - self.critic.features(x_gen)) ** 2).flatten(1).sum(dim=1)
        return (1 - g) * residual + g * disc

    def score_windows(self, x, seed):
        # z starts at 0, so inversion is deterministic and needs no seed
        return invert_latent(self, x, self.cfg.inversion_steps, self.cfg.inversion_lr)


def invert_latent(model: TanoWgan, x: torch.Tensor, steps: int, lr: float) -> np.ndarray:
    """Adam on z per window (batched; Adam is elementwise so windows do not interact)."""
    was_training = model.training
    model.eval()
    params = list(model.parameters())
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(False)
    try:
        z = torch.zeros(x.shape[0], model.cfg.latent, dtype=x.dtype, requires_grad=True)
        opt = torch.optim.Adam([z], lr=lr)
        with torch.enable_grad():
            for _ in range(steps):
                opt.zero_grad(set_to_none=True)
                model.inversion_objective(x, z).sum().backward()
                opt.step()
            with torch.no_grad():
                final = model.inversion_objective(x, z)
    finally:
        for p, f in zip(params, flags):
            p.requires_grad_(f)
        model.train(was_training)
    check_finite(final, "inversion score")
    return final.cpu().numpy().astype(np.float64)
