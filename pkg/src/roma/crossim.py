"""Cross-domain region similarity maps and the matching losses.

For source tokens ``U`` (input frame) and target tokens ``V`` (translated
frame) the source-direction map of region ``i`` is ``u_i V^T`` and the
target-direction map is ``v_i U^T``. Stacked over regions these are ``U V^T``
and its transpose. The matching distance compares each region's two maps with
a cosine distance, averaged over regions. Because the distance is cosine, any
positive rescaling of either domain's tokens leaves every loss unchanged.

All functions accept tokens with arbitrary leading (frame / batch) dimensions
and average over them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import torch

from .embedding import AreaSpec, TokenGrid

__all__ = [
    "AreaSpec",
    "CrossSimMap",
    "COS_EPS",
    "cosine_match",
    "cross_sim",
    "global_loss",
    "local_loss",
    "sample_areas",
    "temporal_loss",
    "temporal_loss_stacked",
]

COS_EPS = 1e-8


@dataclass
class CrossSimMap:
    """``matrix[..., i, j] = <u_i, v_j>``."""

    matrix: torch.Tensor
    layer_id: int = 0

    @property
    def T(self) -> "CrossSimMap":
        return CrossSimMap(self.matrix.transpose(-1, -2), self.layer_id)


def cross_sim(U: TokenGrid, V: TokenGrid) -> CrossSimMap:
    if U.tokens.shape[-2:] != V.tokens.shape[-2:]:
        raise ValueError(f"token grids differ: {tuple(U.tokens.shape)} vs {tuple(V.tokens.shape)}")
    return CrossSimMap(U.tokens @ V.tokens.transpose(-1, -2), U.layer_id)


def _row_cosine_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-row ``1 - cos(a_i, b_i)``; reduces the last axis only.

    The norm product is clamped below at ``COS_EPS`` so zero rows give distance
    1 while identical rows give exactly 0.
    """
    dot = (a * b).sum(-1)
    return 1 - dot / (a.norm(dim=-1) * b.norm(dim=-1)).clamp_min(COS_EPS)


def cosine_match(A: Union[CrossSimMap, torch.Tensor],
                 B: Union[CrossSimMap, torch.Tensor]) -> torch.Tensor:
    """Mean over rows (and leading dims) of the row-wise cosine distance."""
    a = A.matrix if isinstance(A, CrossSimMap) else A
    b = B.matrix if isinstance(B, CrossSimMap) else B
    if a.shape != b.shape:
        raise ValueError(f"map shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return _row_cosine_distance(a, b).mean()


def _check_layers(x_grids: Sequence[TokenGrid], y_grids: Sequence[TokenGrid]):
    if len(x_grids) != len(y_grids) or not x_grids:
        raise ValueError(f"layer count mismatch: {len(x_grids)} vs {len(y_grids)}")
    for gx, gy in zip(x_grids, y_grids):
        if gx.layer_id != gy.layer_id:
            raise ValueError(f"layer ids differ: {gx.layer_id} vs {gy.layer_id}")
        if (gx.rows, gx.cols) != (gy.rows, gy.cols) or gx.dim != gy.dim:
            raise ValueError("grids of one layer must share shape and embedding dim")


def global_loss(x_grids: Sequence[TokenGrid], y_grids: Sequence[TokenGrid]) -> torch.Tensor:
    """Whole-frame cross-similarity matching, averaged over layers."""
    _check_layers(x_grids, y_grids)
    total = 0
    for gx, gy in zip(x_grids, y_grids):
        s_x = cross_sim(gx, gy)
        s_y = cross_sim(gy, gx)
        total = total + cosine_match(s_x, s_y)
    return total / len(x_grids)


def sample_areas(grid_rows: int, grid_cols: int, count: int, area_rows: int,
                 area_cols: int, rng_seed) -> list[AreaSpec]:
    """``count`` areas with uniformly drawn top-left corners (overlap allowed).

    ``rng_seed`` is anything ``numpy.random.default_rng`` accepts, e.g. an int
    or a ``(seed, step)`` tuple.
    """
    if area_rows < 1 or area_cols < 1:
        raise ValueError("area dims must be positive")
    if area_rows > grid_rows or area_cols > grid_cols:
        raise ValueError(f"area {area_rows}x{area_cols} larger than grid {grid_rows}x{grid_cols}")
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = np.random.default_rng(rng_seed)
    r0 = rng.integers(0, grid_rows - area_rows + 1, size=count)
    c0 = rng.integers(0, grid_cols - area_cols + 1, size=count)
    return [AreaSpec(int(r), int(c), area_rows, area_cols) for r, c in zip(r0, c0)]


def _area_index(areas: Sequence[AreaSpec], grid_cols: int, device) -> torch.Tensor:
    return torch.tensor([a.indices(grid_cols) for a in areas], device=device)


def local_loss(x_grids: Sequence[TokenGrid], y_grids: Sequence[TokenGrid],
               areas: Sequence[AreaSpec]) -> torch.Tensor:
    """Cross-similarity matching restricted to each area, averaged over areas and layers.

    The same area locations are used in both frames.
    """
    _check_layers(x_grids, y_grids)
    if not areas:
        raise ValueError("local_loss needs at least one area")
    rows, cols = x_grids[0].rows, x_grids[0].cols
    for a in areas:
        if not a.fits(rows, cols):
            raise ValueError(f"{a} does not fit a {rows}x{cols} grid")
    # areas of equal size are gathered in one shot
    groups: dict[tuple[int, int], list[AreaSpec]] = {}
    for a in areas:
        groups.setdefault((a.rows, a.cols), []).append(a)
    total = 0
    for gx, gy in zip(x_grids, y_grids):
        for group in groups.values():
            idx = _area_index(group, cols, gx.tokens.device)
            u = gx.tokens[..., idx, :]  # (..., n_areas, area_size, d)
            v = gy.tokens[..., idx, :]
            s_x = u @ v.transpose(-1, -2)
            s_y = v @ u.transpose(-1, -2)
            per_area = _row_cosine_distance(s_x, s_y).mean(-1)
            total = total + per_area.reshape(-1, len(group)).mean(0).sum()
    return total / (len(x_grids) * len(areas))


def _pairs(length: int, dt: int) -> list[tuple[int, int]]:
    return [(t, tp) for t in range(length - dt) for tp in range(t + 1, t + dt + 1)]


def temporal_loss_stacked(x_grids: Sequence[TokenGrid], y_grids: Sequence[TokenGrid],
                          dt: int) -> torch.Tensor:
    """Temporal matching on grids whose tokens carry a time axis at dim -3.

    Sums the distance over all ``(t, t')`` pairs with ``t < t' <= t + dt``,
    averages over layers and over any leading (batch) dims.
    """
    _check_layers(x_grids, y_grids)
    if dt < 0:
        raise ValueError("dt must be non-negative")
    length = x_grids[0].tokens.shape[-3]
    if length < dt + 1:
        raise ValueError(f"fragment of {length} frames too short for dt={dt}")
    pairs = _pairs(length, dt)
    if not pairs:
        return x_grids[0].tokens.new_zeros(())
    ts = torch.tensor([p[0] for p in pairs])
    tps = torch.tensor([p[1] for p in pairs])
    total = 0
    for gx, gy in zip(x_grids, y_grids):
        u, v = gx.tokens, gy.tokens
        s_x = u[..., ts, :, :] @ v[..., tps, :, :].transpose(-1, -2)
        s_y = v[..., ts, :, :] @ u[..., tps, :, :].transpose(-1, -2)
        per_pair = _row_cosine_distance(s_x, s_y).mean(-1)  # (..., n_pairs)
        total = total + per_pair.sum(-1).mean()
    return total / len(x_grids)


def temporal_loss(fragment_x_grids: Sequence[Sequence[TokenGrid]],
                  fragment_y_grids: Sequence[Sequence[TokenGrid]], dt: int) -> torch.Tensor:
    """Temporal matching over a fragment given as per-frame lists of per-layer grids."""
    if len(fragment_x_grids) != len(fragment_y_grids):
        raise ValueError("fragments differ in length")
    if len(fragment_x_grids) < dt + 1:
        raise ValueError(f"fragment of {len(fragment_x_grids)} frames too short for dt={dt}")
    return temporal_loss_stacked(_stack_time(fragment_x_grids), _stack_time(fragment_y_grids), dt)


def _stack_time(frames: Sequence[Sequence[TokenGrid]]) -> list[TokenGrid]:
    out = []
    for layer in zip(*frames):
        out.append(layer[0].with_tokens(torch.stack([g.tokens for g in layer], dim=-3)))
    return out
