"""Feature-statistics mixing between a labeled source domain and a target domain.

The source features are instance-normalized and re-styled with a convex
combination of their own channel statistics and those of a paired target
sample. Gradients reach the source statistics; the target statistics are
treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import torch
from torch import nn

ARCHITECTURES = ("resnet18_binary", "pixbis")

_INSERTION_POINTS = {
    "resnet18_binary": ("layer1", "layer2"),
    "pixbis": ("denseblock1",),
}


@dataclass(frozen=True)
class MixStyleConfig:
    alpha: float = 0.1
    apply_probability: float = 0.5
    epsilon: float = 1e-6
    insertion_points: Optional[tuple[str, ...]] = None  # None: architecture default

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ValueError(f"apply_probability must be in [0, 1], got {self.apply_probability}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.insertion_points is not None:
            object.__setattr__(self, "insertion_points", tuple(self.insertion_points))


class FeatureStats(NamedTuple):
    mu: torch.Tensor  # B x C
    sigma: torch.Tensor  # B x C


def insertion_points(architecture: str) -> list[str]:
    """Names of the blocks whose outputs get a mixing layer."""
    try:
        return list(_INSERTION_POINTS[architecture])
    except KeyError:
        raise ValueError(f"unknown architecture {architecture!r}; expected one of {ARCHITECTURES}") from None


def channel_stats(x: torch.Tensor, epsilon: float = 1e-6) -> FeatureStats:
    if x.dim() != 4:
        raise ValueError(f"expected a B x C x H x W tensor, got shape {tuple(x.shape)}")
    if x.shape[2] * x.shape[3] < 1:
        raise ValueError("feature map has empty spatial extent")
    mu = x.mean(dim=(2, 3))
    var = x.var(dim=(2, 3), unbiased=False)
    return FeatureStats(mu, (var + epsilon).sqrt())


def mix_statistics(stats_s: FeatureStats, stats_a: FeatureStats, lam) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(gamma, beta)``; ``lam`` holds one weight per sample.

    ``stats_a`` must already be row-aligned with ``stats_s``.
    """
    if stats_s.mu.shape != stats_a.mu.shape or stats_s.sigma.shape != stats_a.sigma.shape:
        raise ValueError(
            f"statistics shapes differ: {tuple(stats_s.mu.shape)} vs {tuple(stats_a.mu.shape)}"
        )
    lam = torch.as_tensor(lam, dtype=stats_s.mu.dtype, device=stats_s.mu.device).reshape(-1, 1)
    if lam.shape[0] not in (1, stats_s.mu.shape[0]):
        raise ValueError(f"{lam.shape[0]} weights for {stats_s.mu.shape[0]} samples")
    gamma = lam * stats_s.sigma + (1 - lam) * stats_a.sigma
    beta = lam * stats_s.mu + (1 - lam) * stats_a.mu
    return gamma, beta


def pair_indices(n_source: int, n_target: int, rng: np.random.Generator) -> np.ndarray:
    """Target row for every source row: a random permutation, recycled if too short."""
    if n_target <= 0:
        raise ValueError("empty target batch")
    reps = -(-n_source // n_target)
    return np.concatenate([rng.permutation(n_target) for _ in range(reps)])[:n_source]


def mixstyle_forward(
    x_s: torch.Tensor,
    x_a: torch.Tensor,
    cfg: MixStyleConfig,
    rng: np.random.Generator,
    training: bool = True,
    lam=None,
    force: bool = False,
) -> torch.Tensor:
    """Re-style ``x_s`` with statistics mixed from ``x_a``.

    ``lam`` overrides the Beta draw (scalar or one value per source sample);
    ``force`` skips the apply-probability coin flip.
    """
    if not training:
        return x_s
    if x_a.shape[0] == 0:
        raise ValueError("empty target batch in adaptation mode")
    if x_s.shape[1:] != x_a.shape[1:]:
        raise ValueError(f"source {tuple(x_s.shape)} and target {tuple(x_a.shape)} differ in C, H, W")
    b = x_s.shape[0]
    if b == 0:
        return x_s
    if not force and rng.random() >= cfg.apply_probability:
        return x_s
    if lam is None:
        lam = rng.beta(cfg.alpha, cfg.alpha, size=b)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (b,)).copy()
    idx = torch.as_tensor(pair_indices(b, x_a.shape[0], rng), device=x_s.device)

    stats_s = channel_stats(x_s, cfg.epsilon)
    with torch.no_grad():
        stats_a = channel_stats(x_a, cfg.epsilon)
    stats_a = FeatureStats(stats_a.mu[idx], stats_a.sigma[idx])
    gamma, beta = mix_statistics(stats_s, stats_a, lam)

    normed = (x_s - stats_s.mu[:, :, None, None]) / stats_s.sigma[:, :, None, None]
    return normed * gamma[:, :, None, None] + beta[:, :, None, None]


class MixStyle(nn.Module):
    """Training-time mixing layer.

    The owning model tells the layer which rows of the batch are source with
    :meth:`set_domains`. In ``"da"`` mode only source rows are re-styled and
    target rows pass through; in ``"combined"`` mode each domain is re-styled
    with statistics from the other. Without a domain mask the batch is mixed
    with itself. Evaluation mode is always the identity.
    """

    def __init__(self, cfg: MixStyleConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.domain_mask: Optional[torch.Tensor] = None
        self.mode = "da"

    def reseed(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def set_domains(self, mask: Optional[torch.Tensor], mode: str = "da"):
        if mode not in ("da", "combined"):
            raise ValueError(f"unknown mixing mode {mode!r}")
        self.domain_mask = None if mask is None else torch.as_tensor(mask, dtype=torch.bool)
        self.mode = mode

    def forward(self, x):
        if not self.training:
            return x
        if self.domain_mask is None:
            return mixstyle_forward(x, x, self.cfg, self.rng)
        mask = self.domain_mask.to(x.device)
        if mask.shape[0] != x.shape[0]:
            raise ValueError(f"domain mask covers {mask.shape[0]} rows, batch has {x.shape[0]}")
        n_src = int(mask.sum())
        if n_src == 0 or n_src == x.shape[0]:
            return x
        src, tgt = x[mask], x[~mask]
        out = x.clone()
        out[mask] = mixstyle_forward(src, tgt, self.cfg, self.rng)
        if self.mode == "combined":
            out[~mask] = mixstyle_forward(tgt, src, self.cfg, self.rng)
        return out

    def extra_repr(self):
        c = self.cfg
        return f"alpha={c.alpha}, p={c.apply_probability}, eps={c.epsilon}, mode={self.mode}"
