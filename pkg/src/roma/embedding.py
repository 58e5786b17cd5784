"""Region token extraction.

Frames are split into non-overlapping square regions and each region is mapped
to a ``d``-dimensional token by a feature extractor. Two extractors exist:

* ``SurrogateExtractor`` -- a seeded per-region ``tanh(P x + b)`` embedding with
  several independent pseudo-layers. Cheap, deterministic, differentiable and
  free of cross-region mixing, which makes it the extractor of choice in tests.
* ``ViTExtractor`` -- a frozen torchvision vision transformer loaded from a
  local state-dict file. Patch tokens of selected encoder blocks are returned.

Frames follow the torch convention ``(C, H, W)`` (or ``(B, C, H, W)``) with
values in ``[-1, 1]``.
"""

from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, WeightsLoadError

__all__ = [
    "AreaSpec",
    "ExtractorSpec",
    "LayerSelection",
    "SurrogateExtractor",
    "TokenGrid",
    "ViTExtractor",
    "area_regions",
    "build_extractor",
    "default_layers",
    "extract_tokens",
    "get_extractor",
    "select_area_tokens",
    "surrogate_forward",
    "surrogate_projection",
]

SURROGATE = "surrogate"
PRETRAINED_VIT = "pretrained-vit"

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class TokenGrid:
    """Tokens of one extractor layer laid out on the region grid.

    ``tokens`` has shape ``(..., rows * cols, d)``; leading dimensions index
    frames. Row ``i`` of the token axis is region ``i`` in raster order.
    """

    tokens: torch.Tensor
    rows: int
    cols: int
    layer_id: int

    def __post_init__(self):
        if self.tokens.shape[-2] != self.rows * self.cols:
            raise ValueError(
                f"token count {self.tokens.shape[-2]} != {self.rows}x{self.cols} grid")

    @property
    def num_regions(self) -> int:
        return self.rows * self.cols

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]

    def with_tokens(self, tokens: torch.Tensor) -> "TokenGrid":
        return TokenGrid(tokens, self.rows, self.cols, self.layer_id)


@dataclass(frozen=True)
class AreaSpec:
    """Rectangular block of regions, in region-grid coordinates."""

    row0: int
    col0: int
    rows: int
    cols: int

    def fits(self, grid_rows: int, grid_cols: int) -> bool:
        return (self.row0 >= 0 and self.col0 >= 0 and self.rows >= 1 and self.cols >= 1
                and self.row0 + self.rows <= grid_rows
                and self.col0 + self.cols <= grid_cols)

    def indices(self, grid_cols: int) -> list[int]:
        """Raster indices of the covered regions, in raster order."""
        return [(self.row0 + r) * grid_cols + self.col0 + c
                for r in range(self.rows) for c in range(self.cols)]


@dataclass(frozen=True)
class LayerSelection:
    layer_ids: tuple[int, ...]

    def __post_init__(self):
        ids = tuple(int(i) for i in self.layer_ids)
        object.__setattr__(self, "layer_ids", ids)
        if not ids:
            raise ConfigError("layer selection must not be empty")
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ConfigError(f"layer ids must be strictly increasing, got {list(ids)}")
        if ids[0] < 0:
            raise ConfigError(f"negative layer id in {list(ids)}")

    def __len__(self):
        return len(self.layer_ids)

    def __iter__(self):
        return iter(self.layer_ids)


@dataclass(frozen=True)
class ExtractorSpec:
    """How to build a feature extractor.

    ``resolution`` is the working frame side; frames of another size are
    resized bilinearly before extraction. ``num_layers`` only applies to the
    surrogate (the ViT depth comes from its weights).
    """

    kind: str = SURROGATE
    region_size: int = 16
    embed_dim: int = 64
    seed: int = 0
    weights_path: Optional[str] = None
    resolution: int = 256
    num_layers: int = 4
    channels: int = 3

    def __post_init__(self):
        if self.kind not in (SURROGATE, PRETRAINED_VIT):
            raise ConfigError(f"unknown extractor kind {self.kind!r}")
        if self.embed_dim <= 0:
            raise ConfigError("embed_dim must be positive")
        if self.region_size <= 0 or self.resolution % self.region_size:
            raise ConfigError(
                f"region_size {self.region_size} must divide resolution {self.resolution}")
        if self.kind == PRETRAINED_VIT and not self.weights_path:
            raise ConfigError("pretrained-vit extractor needs weights_path")

    @property
    def grid_side(self) -> int:
        return self.resolution // self.region_size


def area_regions(pixels: int, region_size: int) -> int:
    """Snap an area side given in pixels to a whole number of regions (>= 1)."""
    return max(1, int(math.floor(pixels / region_size + 0.5)))


def default_layers(depth: int, count: int = 4) -> LayerSelection:
    """``count`` evenly spaced layer ids ending at the last of ``depth`` layers."""
    count = min(count, depth)
    ids = sorted({round((k + 1) * depth / count) - 1 for k in range(count)})
    return LayerSelection(tuple(ids))


@functools.lru_cache(maxsize=64)
def _surrogate_params_np(layer_id: int, seed: int, in_dim: int, embed_dim: int):
    rng = np.random.default_rng([seed, layer_id, in_dim, embed_dim])
    proj = rng.standard_normal((embed_dim, in_dim)) / math.sqrt(in_dim)
    bias = 0.5 * rng.standard_normal(embed_dim)
    return proj, bias


def surrogate_projection(layer_id: int, seed: int, in_dim: int, embed_dim: int = 64,
                         dtype=torch.float32):
    """Projection matrix ``(embed_dim, in_dim)`` and bias of one surrogate layer."""
    proj, bias = _surrogate_params_np(int(layer_id), int(seed), int(in_dim), int(embed_dim))
    return torch.as_tensor(proj, dtype=dtype), torch.as_tensor(bias, dtype=dtype)


def surrogate_forward(region_pixels: torch.Tensor, layer_id: int, seed: int,
                      embed_dim: int = 64) -> torch.Tensor:
    """Embed one flattened region: ``tanh(P_layer @ region + b_layer)``.

    The region is flattened channel-major, i.e. ``region[c, i, j].reshape(-1)``.
    """
    region_pixels = torch.as_tensor(region_pixels)
    if region_pixels.ndim != 1:
        raise ValueError("region_pixels must be a flat vector")
    proj, bias = surrogate_projection(layer_id, seed, region_pixels.numel(), embed_dim,
                                      dtype=region_pixels.dtype)
    return torch.tanh(proj @ region_pixels + bias)


class _Extractor(nn.Module):
    """Shared frame preparation; subclasses implement ``_layer_tokens``."""

    def __init__(self, spec: ExtractorSpec):
        super().__init__()
        self.spec = spec

    @property
    def depth(self) -> int:
        raise NotImplementedError

    def default_layers(self) -> LayerSelection:
        return default_layers(self.depth)

    def prepare(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.ndim != 4:
            raise ValueError(f"expected (B, C, H, W) frames, got shape {tuple(frames.shape)}")
        c = frames.shape[1]
        if c == 1 and self.spec.channels == 3:
            frames = frames.expand(-1, 3, -1, -1)
        elif c != self.spec.channels:
            raise ValueError(f"extractor expects {self.spec.channels} channels, got {c}")
        res = self.spec.resolution
        if frames.shape[-2:] != (res, res):
            frames = F.interpolate(frames, size=(res, res), mode="bilinear",
                                   align_corners=False)
        return frames

    def forward(self, frames: torch.Tensor, layers: LayerSelection) -> list[TokenGrid]:
        single = frames.ndim == 3
        if single:
            frames = frames.unsqueeze(0)
        for i in layers:
            if i >= self.depth:
                raise ConfigError(f"layer id {i} out of range for extractor with "
                                  f"{self.depth} layers")
        side = self.spec.grid_side
        out = self._layer_tokens(self.prepare(frames), layers)
        return [TokenGrid(t[0] if single else t, side, side, lid)
                for t, lid in zip(out, layers)]

    def _layer_tokens(self, frames, layers):
        raise NotImplementedError


class SurrogateExtractor(_Extractor):
    """Per-region random-feature embedding with ``num_layers`` pseudo-layers."""

    def __init__(self, spec: ExtractorSpec):
        super().__init__(spec)
        in_dim = spec.region_size ** 2 * spec.channels
        projs, biases = zip(*(surrogate_projection(i, spec.seed, in_dim, spec.embed_dim,
                                                   dtype=torch.float64)
                              for i in range(spec.num_layers)))
        self.register_buffer("proj", torch.stack(projs))
        self.register_buffer("bias", torch.stack(biases))

    @property
    def depth(self) -> int:
        return self.spec.num_layers

    def _layer_tokens(self, frames, layers):
        r = self.spec.region_size
        # (B, C*r*r, N_r) -> (B, N_r, C*r*r); channel-major flattening per region
        regions = F.unfold(frames, kernel_size=r, stride=r).transpose(1, 2)
        out = []
        for i in layers:
            proj = self.proj[i].to(frames.dtype)
            bias = self.bias[i].to(frames.dtype)
            out.append(torch.tanh(regions @ proj.T + bias))
        return out


class ViTExtractor(_Extractor):
    """Frozen torchvision ``VisionTransformer`` read from a state-dict file.

    Architecture (depth, width, patch size, MLP width) is inferred from the
    weights; the head count follows the usual 64-dims-per-head convention.
    """

    def __init__(self, spec: ExtractorSpec):
        super().__init__(spec)
        from torchvision.models.vision_transformer import VisionTransformer

        path = spec.weights_path
        if not path or not os.path.isfile(path):
            raise WeightsLoadError(f"ViT weights not found: {path}")
        try:
            state = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:  # corrupt or foreign file
            raise WeightsLoadError(f"could not read ViT weights from {path}: {exc}") from exc
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        try:
            hidden, _, patch, _ = state["conv_proj.weight"].shape
            depth = 1 + max(int(k.split(".")[2].rsplit("_", 1)[-1])
                            for k in state if k.startswith("encoder.layers."))
            mlp_dim = state["encoder.layers.encoder_layer_0.mlp.0.weight"].shape[0]
            n_pos = state["encoder.pos_embedding"].shape[1]
        except (KeyError, ValueError) as exc:
            raise WeightsLoadError(f"{path} is not a torchvision ViT state dict") from exc
        image_size = int(round(math.sqrt(n_pos - 1))) * patch
        if patch != spec.region_size or image_size != spec.resolution:
            raise ConfigError(
                f"weights use patch {patch} at {image_size}px; spec says region "
                f"{spec.region_size} at {spec.resolution}px")
        if hidden != spec.embed_dim:
            raise ConfigError(f"weights have width {hidden}, spec embed_dim {spec.embed_dim}")
        heads = max(1, hidden // 64)
        num_classes = state["heads.head.weight"].shape[0] if "heads.head.weight" in state else 1000
        vit = VisionTransformer(image_size=image_size, patch_size=patch, num_layers=depth,
                                num_heads=heads, hidden_dim=hidden, mlp_dim=mlp_dim,
                                num_classes=num_classes)
        vit.load_state_dict(state, strict=False)
        vit.eval()
        for p in vit.parameters():
            p.requires_grad_(False)
        self.vit = vit
        self.register_buffer("mean", torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1))

    @property
    def depth(self) -> int:
        return len(self.vit.encoder.layers)

    def train(self, mode: bool = True):
        # frozen: dropout stays off whatever the caller asks for
        super().train(mode)
        self.vit.eval()
        return self

    def _layer_tokens(self, frames, layers):
        x = ((frames + 1) / 2 - self.mean.to(frames.dtype)) / self.std.to(frames.dtype)
        vit = self.vit
        x = vit._process_input(x)
        cls = vit.class_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1) + vit.encoder.pos_embedding
        wanted = set(layers)
        collected = {}
        for i, block in enumerate(vit.encoder.layers):
            x = block(x)
            if i in wanted:
                collected[i] = x[:, 1:]
            if i >= layers.layer_ids[-1]:
                break
        return [collected[i] for i in layers]


def build_extractor(spec: ExtractorSpec) -> _Extractor:
    """Construct a fresh extractor for ``spec`` (weights loaded / projections drawn once)."""
    if spec.kind == SURROGATE:
        return SurrogateExtractor(spec)
    return ViTExtractor(spec)


@functools.lru_cache(maxsize=8)
def get_extractor(spec: ExtractorSpec) -> _Extractor:
    """Cached ``build_extractor``; extractors are read-only after construction."""
    return build_extractor(spec)


def extract_tokens(frame: torch.Tensor, spec: ExtractorSpec,
                   layers: Optional[LayerSelection] = None) -> list[TokenGrid]:
    """Per-layer token grids of ``frame`` (``(C, H, W)`` or batched)."""
    extractor = get_extractor(spec)
    if layers is None:
        layers = extractor.default_layers()
    return extractor(frame, layers)


def select_area_tokens(grid: TokenGrid, area: AreaSpec) -> TokenGrid:
    """Sub-grid of ``grid`` covered by ``area``, raster order preserved."""
    if not area.fits(grid.rows, grid.cols):
        raise ValueError(f"{area} does not fit a {grid.rows}x{grid.cols} grid")
    idx = torch.tensor(area.indices(grid.cols), device=grid.tokens.device)
    return TokenGrid(grid.tokens.index_select(-2, idx), area.rows, area.cols, grid.layer_id)
