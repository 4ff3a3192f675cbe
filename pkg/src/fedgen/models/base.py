"""Common model API: parameter partition, share policies and training hooks."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import torch
from torch import nn

GROUPS = ("analysis", "synthesis", "auxiliary")


class SharePolicy(str, Enum):
    FULL = "full"
    ANALYSIS = "analysis_only"
    SYNTHESIS = "synthesis_only"
    INDEPENDENT = "independent"

    def shared_groups(self) -> tuple[str, ...]:
        return {
            SharePolicy.FULL: GROUPS,
            SharePolicy.ANALYSIS: ("analysis",),
            SharePolicy.SYNTHESIS: ("synthesis",),
            SharePolicy.INDEPENDENT: (),
        }[self]


@dataclass(frozen=True)
class ParamPartition:
    """Disjoint name sets for analysis (phi), synthesis (theta) and auxiliary params."""

    analysis: tuple[str, ...]
    synthesis: tuple[str, ...]
    auxiliary: tuple[str, ...] = ()
    sizes: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        seen = {}
        for g in GROUPS:
            for name in getattr(self, g):
                if name in seen:
                    raise ValueError(f"parameter {name!r} in both {seen[name]} and {g}")
                seen[name] = g

    def group(self, g: str) -> tuple[str, ...]:
        return getattr(self, g)

    def names(self, policy: SharePolicy) -> tuple[str, ...]:
        out = []
        for g in SharePolicy(policy).shared_groups():
            out.extend(self.group(g))
        return tuple(out)

    def count(self, g: str) -> int:
        return int(sum(self.sizes[n] for n in self.group(g)))

    @property
    def all_names(self) -> tuple[str, ...]:
        return self.analysis + self.synthesis + self.auxiliary


def count_params(partition: ParamPartition, policy: SharePolicy | str | None) -> int:
    """Number of scalars that one client uploads (and downloads) per round."""
    if policy is None:
        return 0
    return int(sum(partition.sizes[n] for n in partition.names(SharePolicy(policy))))


def stable_seed(*parts) -> int:
    """Process-independent 63-bit seed from arbitrary string-able parts."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


class NonFiniteLoss(RuntimeError):
    pass


def check_finite(value: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise NonFiniteLoss(f"non-finite {what}: {value.detach().cpu().numpy()!r}")
    return value


class GenerativeModel(nn.Module):
    """Base class for the four families.

    Subclasses set ``family`` and ``groups`` (top-level submodule name ->
    partition group) and implement ``train_batch`` and ``score_windows``.
    Inputs are always ``[B, K, W]`` tensors of normalized windows.
    """

    family: str = ""
    groups: dict[str, str] = {}

    def partition(self) -> ParamPartition:
        buckets = {g: [] for g in GROUPS}
        sizes = {}
        for name, p in self.named_parameters():
            if not p.requires_grad:
                continue
            top = name.split(".", 1)[0]
            if top not in self.groups:
                raise ValueError(f"{type(self).__name__}: parameter {name} has no partition group")
            buckets[self.groups[top]].append(name)
            sizes[name] = p.numel()
        return ParamPartition(tuple(buckets["analysis"]), tuple(buckets["synthesis"]),
                              tuple(buckets["auxiliary"]), sizes)

    def make_optimizers(self, lr: float) -> dict[str, torch.optim.Optimizer]:
        return {"all": torch.optim.Adam(self.parameters(), lr=lr)}

    def train_batch(self, x: torch.Tensor, opts: dict, gen: torch.Generator) -> float:
        raise NotImplementedError

    @torch.no_grad()
    def score_windows(self, x: torch.Tensor, seed: int) -> np.ndarray:
        raise NotImplementedError

    def config_dict(self) -> dict:
        raise NotImplementedError


def _step(opt: torch.optim.Optimizer, loss: torch.Tensor, what: str) -> float:
    check_finite(loss, what)
    opt.zero_grad(set_to_none=True)
    loss.backward()
    opt.step()
    return float(loss.detach())


class LstmStack(nn.Module):
    """Stacked single-layer LSTMs with ReLU between layers and an optional LayerNorm.

    ``norm_at`` is the index of the layer whose output is layer-normalized
    before its ReLU (``None`` for no normalization).
    """

    def __init__(self, n_in: int, hidden: tuple[int, ...], norm_at: int | None = None):
        super().__init__()
        sizes = (n_in, *hidden)
        self.layers = nn.ModuleList(nn.LSTM(a, b, batch_first=True) for a, b in zip(sizes[:-1], sizes[1:]))
        self.norm_at = norm_at
        self.norm = nn.LayerNorm(hidden[norm_at]) if norm_at is not None else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, layer in enumerate(self.layers):
            x, _ = layer(x)
            if i == self.norm_at:
                x = self.norm(x)
            x = torch.relu(x)
        return x


def gradient_penalty(critic, x_real: torch.Tensor, x_fake: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    """``E[(||grad_x f(x~)||_2 - 1)^2]`` at ``x~ = u x + (1-u) x_fake``, differentiable in the critic."""
    shape = (-1,) + (1,) * (x_real.dim() - 1)
    x_hat = (u.reshape(shape) * x_real + (1 - u.reshape(shape)) * x_fake).requires_grad_(True)
    out = critic(x_hat)
    (grad,) = torch.autograd.grad(out.sum(), x_hat, create_graph=True)
    norm = grad.flatten(1).norm(dim=1)
    return ((norm - 1) ** 2).mean()
