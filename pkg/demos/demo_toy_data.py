"""
Toy dataset and fragment sampling
=================================

The toy generator renders the same moving shapes twice: as dim grayscale
"infrared" frames and as bright colour "visible" frames. Training draws
fragments of consecutive source frames.
"""

import tempfile
from pathlib import Path

from roma.data import load_frame, make_toy_dataset, sample_fragments, scan_dataset

root = Path(tempfile.mkdtemp()) / "toy"
make_toy_dataset(root, seed=0, clips=2, frames_per_clip=8, size=64)

source, target = scan_dataset(root)
print("source clips:", [c.name for c in source.clips], "frames:", source.frame_counts)
print("target clips:", [c.name for c in target.clips], "frames:", target.frame_counts)

x = load_frame(source.clips[0].paths[0], channels=1)
y = load_frame(target.clips[0].paths[0], channels=3)
print("source frame", tuple(x.shape), "range", x.min().item(), x.max().item())
print("target frame", tuple(y.shape))

# each fragment is dt + 1 consecutive frames of one clip; the draw depends on
# (seed, step) only, so a resumed run sees the same fragments
for frag in sample_fragments(source, dt=2, batch=3, seed=0, step=0):
    print("clip", frag.clip_id, "start", frag.start, [p.name for p in frag.paths])
