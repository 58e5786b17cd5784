"""
Region tokens from a frozen extractor
=====================================

Frames are cut into non-overlapping regions and every region becomes one
token per layer. The surrogate extractor is deterministic and needs no
weights; a pretrained ViT can be loaded from a state-dict file instead.
"""

import torch

from roma.embedding import ExtractorSpec, area_regions, extract_tokens, get_extractor

spec = ExtractorSpec(kind="surrogate", resolution=64, region_size=4, embed_dim=32, seed=0)
ext = get_extractor(spec)
print("grid side", spec.grid_side, "depth", ext.depth, "default layers", ext.default_layers())

# a grayscale frame is replicated to three channels before embedding
frame = torch.rand(1, 64, 64) * 2 - 1
grids = extract_tokens(frame, spec)
for g in grids:
    print(f"layer {g.layer_id}: {g.rows}x{g.cols} regions, {g.dim}-d tokens")

# same input, same tokens
again = extract_tokens(frame, spec)
print("deterministic:", all(torch.equal(a.tokens, b.tokens) for a, b in zip(grids, again)))

# a 75 px sub-area of a 256 px frame with 16 px regions spans about 5 regions
print("regions per 75 px area:", area_regions(75, 16))

# The pretrained variant reads weights from disk, e.g.
#   ExtractorSpec(kind="pretrained-vit", weights_path="vit_b_16.pth")
