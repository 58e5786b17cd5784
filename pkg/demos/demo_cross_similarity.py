"""
Cross-similarity matching on token grids
========================================

Two token grids of the same scene are compared through their cross-similarity
maps. The loss ignores how strongly each domain scales its embedding and only
looks at how regions relate to each other across domains.
"""

import torch

from roma.crossim import (AreaSpec, cross_sim, global_loss, local_loss, sample_areas,
                          temporal_loss)
from roma.embedding import TokenGrid

gen = torch.Generator().manual_seed(0)

# a 4x4 grid of 8-d tokens, two layers, for the source domain
x = [TokenGrid(torch.randn(16, 8, generator=gen, dtype=torch.float64), 4, 4, l)
     for l in range(2)]

# the target side: the same structure at a different token scale, and noise
y_styled = [g.with_tokens(3.7 * g.tokens) for g in x]
y_random = [g.with_tokens(torch.randn(16, 8, generator=gen, dtype=torch.float64)) for g in x]

m = cross_sim(x[0], y_random[0])
print("cross-similarity map", tuple(m.matrix.shape), "layer", m.layer_id)

# the rescaled copy keeps every pairwise relation, the random grid does not
print("global, styled copy :", global_loss(x, y_styled).item())
print("global, random grid :", global_loss(x, y_random).item())

# local consistency: the same matching restricted to sampled sub-areas
areas = sample_areas(4, 4, count=6, area_rows=2, area_cols=2, rng_seed=1)
print("areas:", [(a.row0, a.col0) for a in areas])
print("local, random grid  :", local_loss(x, y_random, areas).item())
print("local, full area    :", local_loss(x, y_random, [AreaSpec(0, 0, 4, 4)]).item())

# temporal consistency: frames t and t' are matched crosswise
frames_x = [[g.with_tokens(g.tokens + 0.1 * t) for g in x] for t in range(3)]
frames_y = [[g.with_tokens(0.2 * g.tokens) for g in f] for f in frames_x]
print("temporal, styled    :", temporal_loss(frames_x, frames_y, dt=2).item())
