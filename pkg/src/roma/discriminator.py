"""Multiscale region-wise discriminator.

Tokens of a frozen extractor are reshaped onto the region grid, block-averaged
at several scales without overlap, concatenated, and classified token by token
by a 3-layer perceptron.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .embedding import TokenGrid

__all__ = ["DiscHead", "MultiScaleTokens", "build_multiscale", "d_loss", "d_loss_from_logits",
           "discriminate", "g_adv_from_logits", "g_adv_loss", "multiscale_count", "pool_tokens"]

DEFAULT_SCALES = (3, 5, 7)


@dataclass
class MultiScaleTokens:
    """Pooled tokens of all scales, concatenated along the token axis."""

    tokens: torch.Tensor  # (..., M, d)
    scales: tuple[int, ...]
    offsets: tuple[int, ...]  # start of each scale's block; len(scales) + 1 entries

    @property
    def count(self) -> int:
        return self.tokens.shape[-2]

    def scale_tokens(self, i: int) -> torch.Tensor:
        return self.tokens[..., self.offsets[i]:self.offsets[i + 1], :]


def pool_tokens(grid: TokenGrid, k: int) -> TokenGrid:
    """Mean of every non-overlapping ``k x k`` block; trailing remainder dropped."""
    if k <= 0:
        raise ValueError(f"pooling scale must be positive, got {k}")
    if k > min(grid.rows, grid.cols):
        raise ValueError(f"scale {k} exceeds {grid.rows}x{grid.cols} grid")
    t = grid.tokens
    lead = t.shape[:-2]
    d = t.shape[-1]
    img = t.reshape(-1, grid.rows, grid.cols, d).permute(0, 3, 1, 2)
    pooled = F.avg_pool2d(img, k, stride=k)  # floor semantics drop the remainder
    r, c = pooled.shape[-2:]
    out = pooled.permute(0, 2, 3, 1).reshape(*lead, r * c, d)
    return TokenGrid(out, r, c, grid.layer_id)


def multiscale_count(rows: int, cols: int, scales: Sequence[int]) -> int:
    return sum((rows // k) * (cols // k) for k in scales)


def build_multiscale(grid: TokenGrid, scales: Sequence[int] = DEFAULT_SCALES) -> MultiScaleTokens:
    pooled = [pool_tokens(grid, k).tokens for k in scales]
    offsets = [0]
    for p in pooled:
        offsets.append(offsets[-1] + p.shape[-2])
    return MultiScaleTokens(torch.cat(pooled, dim=-2), tuple(scales), tuple(offsets))


class DiscHead(nn.Module):
    """``d -> hidden -> hidden -> 1`` perceptron, applied to every token."""

    def __init__(self, in_dim: int, hidden: int = 256, slope: float = 0.2):
        super().__init__()
        self.in_dim = in_dim
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.LeakyReLU(slope),
            nn.Linear(hidden, hidden), nn.LeakyReLU(slope),
            nn.Linear(hidden, 1),
        )

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.net(tokens).squeeze(-1)


def discriminate(head: DiscHead, tokens: MultiScaleTokens | torch.Tensor) -> torch.Tensor:
    """One real/fake logit per token: ``(..., M, d) -> (..., M)``."""
    t = tokens.tokens if isinstance(tokens, MultiScaleTokens) else tokens
    if t.shape[-1] != head.in_dim:
        raise ValueError(f"token dim {t.shape[-1]} != head input dim {head.in_dim}")
    return head(t)


def d_loss_from_logits(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    """``-mean log sigma(real) - mean log(1 - sigma(fake))`` via stable log-sigmoid."""
    return -F.logsigmoid(real_logits).mean() - F.logsigmoid(-fake_logits).mean()


def g_adv_from_logits(fake_logits: torch.Tensor, non_saturating: bool = False) -> torch.Tensor:
    if non_saturating:
        return -F.logsigmoid(fake_logits).mean()
    return F.logsigmoid(-fake_logits).mean()


def d_loss(head: DiscHead, real_tokens, fake_tokens) -> torch.Tensor:
    """Discriminator loss averaged over tokens (and frames)."""
    return d_loss_from_logits(discriminate(head, real_tokens), discriminate(head, fake_tokens))


def g_adv_loss(head: DiscHead, fake_tokens, non_saturating: bool = False) -> torch.Tensor:
    """Generator adversarial term.

    Default is the saturating form ``mean log(1 - sigma(D(fake)))`` (to be
    minimised); ``non_saturating`` switches to ``-mean log sigma(D(fake))``.
    """
    return g_adv_from_logits(discriminate(head, fake_tokens), non_saturating)
