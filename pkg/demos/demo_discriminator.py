"""
Multi-scale region discriminator
================================

Last-layer tokens are block-averaged at several scales and every pooled
token gets its own real/fake logit.
"""

import math

import torch

from roma.discriminator import (DiscHead, build_multiscale, d_loss, g_adv_loss,
                                multiscale_count)
from roma.embedding import TokenGrid

gen = torch.Generator().manual_seed(0)
grid = TokenGrid(torch.randn(256, 64, generator=gen), 16, 16, 11)

# 5x5 + 3x3 + 2x2 pooled tokens on a 16x16 grid
ms = build_multiscale(grid, (3, 5, 7))
print("pooled tokens:", ms.count, "=", multiscale_count(16, 16, (3, 5, 7)))
print("first 3x3 block mean matches:",
      torch.allclose(ms.scale_tokens(0)[0], grid.tokens.reshape(16, 16, 64)[:3, :3].mean((0, 1))))

head = DiscHead(64)
fake = build_multiscale(grid.with_tokens(torch.randn(256, 64, generator=gen)))
print("d_loss:", d_loss(head, ms, fake).item())
print("g_adv (saturating):", g_adv_loss(head, fake).item())
print("g_adv (non-saturating):", g_adv_loss(head, fake, non_saturating=True).item())

# a head that always says 0 is maximally unsure: log 2 on each side
with torch.no_grad():
    head.net[-1].weight.zero_()
    head.net[-1].bias.zero_()
print("zero head d_loss:", d_loss(head, ms, fake).item(), "2 log 2 =", 2 * math.log(2))
