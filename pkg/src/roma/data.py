"""Clip datasets on disk, the synthetic toy dataset, and fragment sampling.

Layout::

    <root>/source/<clip>/<nnnnnn>.png   # infrared-like, grayscale
    <root>/target/<clip>/<nnnnnn>.png   # visible, RGB

Pixels are stored as 8-bit PNG and mapped to ``[-1, 1]`` on load.
"""

from __future__ import annotations

import os
import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import DatasetError

__all__ = [
    "Clip",
    "ClipManifest",
    "FrameStore",
    "ToyShape",
    "VideoFragment",
    "fragment_iter",
    "load_frame",
    "make_toy_dataset",
    "num_workers",
    "render_toy_clip",
    "sample_fragments",
    "sample_target_frames",
    "save_frame",
    "scan_dataset",
    "scan_domain",
    "toy_shapes",
    "valid_starts",
]

DOMAINS = ("source", "target")
_FRAME_RE = re.compile(r"^(\d+)\.png$")
TOY_BLUR_SIGMA = 1.2


@dataclass
class Clip:
    name: str
    paths: list[Path]
    indices: list[int]

    def __len__(self):
        return len(self.paths)


@dataclass
class ClipManifest:
    domain: str
    root: Path
    clips: list[Clip] = field(default_factory=list)

    @property
    def frame_counts(self) -> list[int]:
        return [len(c) for c in self.clips]

    @property
    def num_frames(self) -> int:
        return sum(self.frame_counts)

    def all_paths(self) -> list[Path]:
        return [p for c in self.clips for p in c.paths]


@dataclass(frozen=True)
class VideoFragment:
    """``length`` consecutive frames of one clip; ``start`` is 0-based."""

    clip_id: int
    start: int
    paths: tuple[Path, ...]


def num_workers() -> int:
    """Frame-decoding parallelism, capped by ``ROMA_NUM_WORKERS``."""
    try:
        return max(1, int(os.environ.get("ROMA_NUM_WORKERS", "1")))
    except ValueError:
        return 1


def scan_domain(domain_dir: Path, domain: str) -> ClipManifest:
    domain_dir = Path(domain_dir)
    if not domain_dir.is_dir():
        raise DatasetError(f"missing {domain} domain directory: {domain_dir}")
    manifest = ClipManifest(domain, domain_dir)
    for clip_dir in sorted(p for p in domain_dir.iterdir() if p.is_dir()):
        frames = []
        for f in clip_dir.iterdir():
            m = _FRAME_RE.match(f.name)
            if m:
                frames.append((int(m.group(1)), f))
        frames.sort()
        if not frames:
            continue
        # a gap in the numbering starts a new clip
        runs: list[list[tuple[int, Path]]] = [[frames[0]]]
        for idx, path in frames[1:]:
            if idx == runs[-1][-1][0] + 1:
                runs[-1].append((idx, path))
            else:
                runs.append([(idx, path)])
        if len(runs) > 1:
            warnings.warn(f"non-contiguous frame indices in {clip_dir}; split into "
                          f"{len(runs)} clips", stacklevel=2)
        for k, run in enumerate(runs):
            name = clip_dir.name if k == 0 else f"{clip_dir.name}#{k}"
            manifest.clips.append(Clip(name, [p for _, p in run], [i for i, _ in run]))
    if not manifest.clips:
        raise DatasetError(f"no frames found in {domain} domain directory: {domain_dir}")
    return manifest


def scan_dataset(root) -> tuple[ClipManifest, ClipManifest]:
    """Source and target manifests under ``root``, clips sorted by name then index."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root does not exist: {root}")
    return scan_domain(root / "source", "source"), scan_domain(root / "target", "target")


def load_frame(path, channels: int, resolution: Optional[int] = None) -> torch.Tensor:
    """Read a PNG as a ``(C, H, W)`` float tensor in ``[-1, 1]``."""
    with Image.open(path) as img:
        img = img.convert("L" if channels == 1 else "RGB")
        if resolution is not None and img.size != (resolution, resolution):
            img = img.resize((resolution, resolution), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return torch.from_numpy(arr / 127.5 - 1.0).permute(2, 0, 1).contiguous()


def save_frame(frame: torch.Tensor, path) -> None:
    """Write a ``(C, H, W)`` tensor in ``[-1, 1]`` as 8-bit PNG."""
    arr = frame.detach().cpu().clamp(-1, 1).permute(1, 2, 0).numpy()
    arr = np.round((arr + 1.0) * 127.5).astype(np.uint8)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")


class FrameStore:
    """Decoded-frame cache; decoding of a request runs on a thread pool."""

    def __init__(self, channels: int, resolution: Optional[int] = None,
                 workers: Optional[int] = None):
        self.channels = channels
        self.resolution = resolution
        self.workers = workers or num_workers()
        self._cache: dict[Path, torch.Tensor] = {}

    def _load(self, path):
        return load_frame(path, self.channels, self.resolution)

    def get(self, paths: Sequence[Path]) -> torch.Tensor:
        missing = [p for p in dict.fromkeys(paths) if p not in self._cache]
        if missing:
            if self.workers > 1 and len(missing) > 1:
                with ThreadPoolExecutor(self.workers) as pool:
                    loaded = list(pool.map(self._load, missing))
            else:
                loaded = [self._load(p) for p in missing]
            self._cache.update(zip(missing, loaded))
        return torch.stack([self._cache[p] for p in paths])


def valid_starts(length: int, dt: int) -> range:
    """0-based fragment starts of a clip with ``length`` frames."""
    return range(max(0, length - dt))


def sample_fragments(manifest: ClipManifest, dt: int, batch: int, seed: int,
                     step: int) -> list[VideoFragment]:
    """The fragments of one training step, drawn uniformly over valid ``(clip, t)``."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    choices = [(ci, s) for ci, clip in enumerate(manifest.clips)
               for s in valid_starts(len(clip), dt)]
    if not choices:
        raise DatasetError(f"no clip in {manifest.root} has at least {dt + 1} frames")
    rng = np.random.default_rng([seed, step, 0])
    picks = rng.integers(0, len(choices), size=batch)
    out = []
    for k in picks:
        ci, s = choices[int(k)]
        out.append(VideoFragment(ci, s, tuple(manifest.clips[ci].paths[s:s + dt + 1])))
    return out


def fragment_iter(manifest: ClipManifest, dt: int, batch: int = 1, seed: int = 0,
                  start_step: int = 0) -> Iterator[list[VideoFragment]]:
    """Endless, seeded stream of fragment batches; step ``s`` depends only on ``(seed, s)``."""
    step = start_step
    while True:
        yield sample_fragments(manifest, dt, batch, seed, step)
        step += 1


def sample_target_frames(manifest: ClipManifest, count: int, seed: int,
                         step: int) -> list[Path]:
    """Real target frames for the discriminator, independent of the source draw."""
    paths = manifest.all_paths()
    rng = np.random.default_rng([seed, step, 1])
    return [paths[int(i)] for i in rng.integers(0, len(paths), size=count)]


# --------------------------------------------------------------------------- toy data

@dataclass(frozen=True)
class ToyShape:
    kind: str  # "rect" or "disk"
    identity: int
    start: tuple[float, float]  # centre (row, col) at frame 0
    velocity: tuple[float, float]  # pixels per frame
    half: float  # half side / radius

    def centre(self, t: int) -> tuple[float, float]:
        return (self.start[0] + t * self.velocity[0], self.start[1] + t * self.velocity[1])

    def bbox(self, t: int, size: int, pad: float = 0.0) -> tuple[int, int, int, int]:
        """Inclusive pixel bounds ``(r0, r1, c0, c1)`` of the shape, padded."""
        r, c = self.centre(t)
        h = self.half + pad
        lo = lambda v: max(0, int(np.floor(v - h - 0.5)))  # noqa: E731
        hi = lambda v: min(size - 1, int(np.ceil(v + h - 0.5)))  # noqa: E731
        return lo(r), hi(r), lo(c), hi(c)

    def mask(self, t: int, size: int) -> np.ndarray:
        r, c = self.centre(t)
        yy, xx = np.mgrid[0:size, 0:size] + 0.5
        if self.kind == "rect":
            return (np.abs(yy - r) <= self.half) & (np.abs(xx - c) <= self.half)
        return (yy - r) ** 2 + (xx - c) ** 2 <= self.half ** 2


N_IDENTITIES = 4
_TARGET_BG = (225, 225, 215)
_TARGET_PALETTE = ((200, 40, 40), (40, 90, 200), (40, 150, 60), (230, 170, 30))


def toy_shapes(rng: np.random.Generator, size: int, frames: int) -> list[ToyShape]:
    """Shapes of one clip; whole trajectories stay inside the frame."""
    shapes = []
    for _ in range(int(rng.integers(2, 5))):
        half = float(rng.uniform(0.08, 0.16) * size)
        lo, hi = half + 1, size - half - 1
        a = rng.uniform(lo, hi, size=2)
        b = rng.uniform(lo, hi, size=2)
        # cap travel so motion stays smooth between frames
        travel = b - a
        limit = 0.35 * size
        norm = np.linalg.norm(travel)
        if norm > limit:
            travel *= limit / norm
        vel = travel / max(1, frames - 1)
        shapes.append(ToyShape("rect" if rng.random() < 0.5 else "disk",
                               int(rng.integers(0, N_IDENTITIES)),
                               (float(a[0]), float(a[1])), (float(vel[0]), float(vel[1])), half))
    return shapes


def render_source(shapes: Sequence[ToyShape], t: int, size: int) -> np.ndarray:
    """Thermal-like frame: bright blurred shapes on a dark background (uint8, H x W)."""
    img = np.full((size, size), 20.0)
    for s in shapes:
        img[s.mask(t, size)] = 250.0 - 45.0 * s.identity
    img = gaussian_filter(img, TOY_BLUR_SIGMA, mode="nearest")
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def render_target(shapes: Sequence[ToyShape], t: int, size: int) -> np.ndarray:
    """Visible-like frame: flat-coloured shapes on a light background (uint8, H x W x 3)."""
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = _TARGET_BG
    for s in shapes:
        img[s.mask(t, size)] = _TARGET_PALETTE[s.identity]
    return img


def render_toy_clip(seed: int, domain: str, clip: int, frames: int, size: int) -> list[np.ndarray]:
    shapes = toy_shapes(np.random.default_rng([seed, DOMAINS.index(domain), clip]), size, frames)
    render = render_source if domain == "source" else render_target
    return [render(shapes, t, size) for t in range(frames)]


def make_toy_dataset(out_path, seed: int = 0, clips: int = 2, frames_per_clip: int = 8,
                     size: int = 64) -> Path:
    """Write a deterministic two-domain toy dataset under ``out_path``.

    Both domains use the same shape dynamics but different random scenes, so
    they share structural statistics without any frame pairing.
    """
    out = Path(out_path)
    try:
        for domain in DOMAINS:
            for c in range(clips):
                clip_dir = out / domain / f"clip_{c:03d}"
                clip_dir.mkdir(parents=True, exist_ok=True)
                for t, arr in enumerate(render_toy_clip(seed, domain, c, frames_per_clip, size)):
                    Image.fromarray(arr).save(clip_dir / f"{t:06d}.png", format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write toy dataset to {out}: {exc}") from exc
    return out
