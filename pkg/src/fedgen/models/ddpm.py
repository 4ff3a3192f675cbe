"""TAnoDDPM: 1-D U-Net noise predictor with partial-diffusion reconstruction scoring."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .base import GenerativeModel, _step, check_finite


@dataclass(frozen=True)
class DdpmConfig:
    n_sensors: int = 10
    window: int = 20
    channels: tuple[int, ...] = (32, 64, 128)
    time_dim: int = 32
    time_hidden: int = 128
    groups: int = 8
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    t_star: int = 250
    score_batch: int = 1024

    def __post_init__(self):
        if not 0 < self.beta_start < self.beta_end < 1:
            raise ValueError("need 0 < beta_start < beta_end < 1")
        if not 0 <= self.t_star <= self.T:
            raise ValueError(f"t_star={self.t_star} outside [0, T={self.T}]")


@dataclass(frozen=True)
class Schedule:
    """Linear beta schedule; index 0 holds the ``alpha_bar_0 = 1`` convention."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> "Schedule":
        betas = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T)])
        alphas = 1.0 - betas
        return cls(betas, alphas, np.cumprod(alphas))

    @property
    def T(self) -> int:
        return len(self.betas) - 1


def ddpm_forward(x0: torch.Tensor, t, eps: torch.Tensor, schedule: Schedule) -> torch.Tensor:
    """``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`` with per-sample or scalar ``t``."""
    if isinstance(t, int):
        ab = float(schedule.alpha_bars[t])
        return math.sqrt(ab) * x0 + math.sqrt(1 - ab) * eps
    ab = torch.as_tensor(schedule.alpha_bars, dtype=x0.dtype)[torch.as_tensor(t)]
    ab = ab.reshape(-1, *([1] * (x0.dim() - 1)))
    return ab.sqrt() * x0 + (1 - ab).sqrt() * eps


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([args.sin(), args.cos()], dim=1)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, groups: int, t_dim: int | None):
        super().__init__()
        self.conv1 = nn.Conv1d(c_in, c_out, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, c_out)
        self.conv2 = nn.Conv1d(c_out, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, c_out)
        self.temb = nn.Linear(t_dim, c_out) if t_dim else None
        self.skip = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, temb=None):
        h = F.silu(self.norm1(self.conv1(x)))
        if self.temb is not None:
            h = h + self.temb(temb)[:, :, None]
        h = F.silu(self.norm2(self.conv2(h)))
        return h + self.skip(x)


class SelfAttention1d(nn.Module):
    def __init__(self, c: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, c)
        self.qkv = nn.Conv1d(c, 3 * c, 1)
        self.proj = nn.Conv1d(c, c, 1)

    def forward(self, x):
        q, k, v = self.qkv(self.norm(x)).chunk(3, dim=1)
        w = torch.softmax(torch.einsum("bci,bcj->bij", q, k) / math.sqrt(x.shape[1]), dim=-1)
        return x + self.proj(torch.einsum("bij,bcj->bci", w, v))


class UNetDown(nn.Module):
    """Analysis path: time embedding, encoder levels and the bottleneck."""

    def __init__(self, cfg: DdpmConfig):
        super().__init__()
        th, g = cfg.time_hidden, cfg.groups
        self.time_dim = cfg.time_dim
        self.time_mlp = nn.Sequential(nn.Linear(cfg.time_dim, th), nn.SiLU(), nn.Linear(th, th))
        self.blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        c_in = cfg.n_sensors
        for c in cfg.channels:
            self.blocks.append(ResBlock(c_in, c, g, th))
            self.downs.append(nn.Conv1d(c, c, 4, stride=2, padding=1))
            c_in = c
        self.mid1 = ResBlock(c_in, c_in, g, th)
        self.attn = SelfAttention1d(c_in, g)
        self.mid2 = ResBlock(c_in, c_in, g, th)

    def forward(self, x, t):
        temb = self.time_mlp(sinusoidal_embedding(t, self.time_dim).to(x.dtype))
        skips = []
        for block, down in zip(self.blocks, self.downs):
            x = block(x, temb)
            skips.append(x)
            x = down(x)
        x = self.mid2(self.attn(self.mid1(x, temb)), temb)
        return x, skips


class UNetUp(nn.Module):
    """Synthesis path: transposed-conv upsampling, skip concatenation and output head."""

    def __init__(self, cfg: DdpmConfig):
        super().__init__()
        g = cfg.groups
        self.ups = nn.ModuleList()
        self.blocks = nn.ModuleList()
        c_in = cfg.channels[-1]
        for c in reversed(cfg.channels):
            self.ups.append(nn.ConvTranspose1d(c_in, c, 4, stride=2, padding=1))
            self.blocks.append(nn.ModuleList([ResBlock(2 * c, c, g, None), ResBlock(c, c, g, None)]))
            c_in = c
        self.head = nn.Conv1d(cfg.channels[0], cfg.n_sensors, 1)

    def forward(self, x, skips):
        for up, (b1, b2), skip in zip(self.ups, self.blocks, reversed(skips)):
            x = up(x)
            n = skip.shape[-1]
            x = F.pad(x, (0, n - x.shape[-1])) if x.shape[-1] < n else x[..., :n]
            x = b2(b1(torch.cat([x, skip], dim=1)))
        return self.head(x)


class TanoDdpm(GenerativeModel):
    family = "tano_ddpm"
    groups = {"down": "analysis", "up": "synthesis"}

    def __init__(self, cfg: DdpmConfig = DdpmConfig()):
        super().__init__()
        self.cfg = cfg
        self.schedule = Schedule.linear(cfg.T, cfg.beta_start, cfg.beta_end)
        self.down = UNetDown(cfg)
        self.up = UNetUp(cfg)

    def config_dict(self) -> dict:
        return asdict(self.cfg)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        """Predicted noise ``eps_w(x_t, t)``."""
        h, skips = self.down(x_t, t)
        return self.up(h, skips)

    def train_batch(self, x, opts, gen):
        t = torch.randint(1, self.cfg.T + 1, (x.shape[0],), generator=gen)
        eps = torch.randn(x.shape, generator=gen, dtype=x.dtype)
        return _step(opts["all"], ddpm_training_loss(self, x, t, eps), "DDPM loss")

    @torch.no_grad()
    def partial_reconstruct(self, x: torch.Tensor, t_star: int, gen: torch.Generator) -> torch.Tensor:
        """Noise ``x`` to ``t_star`` and run the learned reverse chain back to ``t = 0``."""
        if not 0 <= t_star <= self.cfg.T:
            raise ValueError(f"t_star={t_star} outside [0, {self.cfg.T}]")
        if t_star == 0:
            return x.clone()
        s = self.schedule
        x_t = ddpm_forward(x, t_star, torch.randn(x.shape, generator=gen, dtype=x.dtype), s)
        # one noise draw per step, taken up front so the stream does not depend on batching
        noise = torch.randn((t_star,) + tuple(x.shape), generator=gen, dtype=x.dtype)
        for t in range(t_star, 0, -1):
            tt = torch.full((x.shape[0],), t, dtype=torch.long)
            eps = self(x_t, tt)
            mean = (x_t - s.betas[t] / math.sqrt(1 - s.alpha_bars[t]) * eps) / math.sqrt(s.alphas[t])
            x_t = mean + math.sqrt(s.betas[t]) * noise[t - 1] if t > 1 else mean
        return x_t

    @torch.no_grad()
    def score_windows(self, x, seed):
        gen = torch.Generator().manual_seed(seed)
        x_hat = self.partial_reconstruct(x, self.cfg.t_star, gen)
        err = (x - x_hat) ** 2
        return err.flatten(1).sum(dim=1).cpu().numpy().astype(np.float64)


def ddpm_training_loss(model: TanoDdpm, x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    x_t = ddpm_forward(x0, t, eps, model.schedule)
    err = ((eps - model(x_t, t)) ** 2).flatten(1).sum(dim=1)
    return check_finite(err.mean(), "DDPM loss")
