"""Fréchet distance between frame-feature sets and a structure-preservation score."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import torch
from scipy import ndimage

from .data import load_frame, scan_dataset
from .embedding import ExtractorSpec, LayerSelection, get_extractor
from .errors import DatasetError, WeightsLoadError

__all__ = ["FeatureSet", "SurrogateBackend", "InceptionBackend", "evaluate", "fid",
           "frechet_distance", "structure_score", "write_report"]


@dataclass
class FeatureSet:
    features: np.ndarray  # (n, f)
    backend: str = "array"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")

    @property
    def n(self) -> int:
        return self.features.shape[0]


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((mat + mat.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(mu1, sigma1, mu2, sigma2) -> float:
    """``|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2})``.

    ``Tr((S1 S2)^{1/2})`` is evaluated as ``Tr((R S2 R)^{1/2})`` with
    ``R = S1^{1/2}``; both square roots are of symmetric PSD matrices, so an
    eigendecomposition with negative eigenvalues clamped to zero is exact and
    stable even for singular covariances.
    """
    root1 = _psd_sqrt(np.asarray(sigma1, dtype=np.float64))
    middle = root1 @ np.asarray(sigma2, dtype=np.float64) @ root1
    w = np.linalg.eigvalsh((middle + middle.T) / 2)
    tr_covmean = np.sqrt(np.clip(w, 0, None)).sum()
    diff = np.asarray(mu1, dtype=np.float64) - np.asarray(mu2, dtype=np.float64)
    return float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2 * tr_covmean)


def fid(a: Union[FeatureSet, np.ndarray], b: Union[FeatureSet, np.ndarray]) -> float:
    a = a if isinstance(a, FeatureSet) else FeatureSet(a)
    b = b if isinstance(b, FeatureSet) else FeatureSet(b)
    if a.features.shape[1] != b.features.shape[1]:
        raise ValueError(f"feature dims differ: {a.features.shape[1]} vs {b.features.shape[1]}")
    if a.n < 2 or b.n < 2:
        raise ValueError("FID needs at least 2 samples per set")
    stats = []
    for s in (a, b):
        stats += [s.features.mean(0), np.atleast_2d(np.cov(s.features, rowvar=False))]
    return frechet_distance(*stats)


def _gray(frame) -> np.ndarray:
    arr = frame.detach().cpu().numpy() if isinstance(frame, torch.Tensor) else np.asarray(frame)
    arr = arr.astype(np.float64)
    if arr.ndim == 2:
        return arr
    if arr.shape[0] == 1:
        return arr[0]
    if arr.shape[0] == 3:
        return 0.299 * arr[0] + 0.587 * arr[1] + 0.114 * arr[2]
    raise ValueError(f"expected (C, H, W) frame with 1 or 3 channels, got {arr.shape}")


def _gradient_magnitude(img: np.ndarray) -> np.ndarray:
    return np.hypot(ndimage.sobel(img, axis=0, mode="reflect"),
                    ndimage.sobel(img, axis=1, mode="reflect"))


def structure_score(x, y) -> float:
    """Pearson correlation of Sobel gradient magnitudes of the grayscale frames.

    Returns 0 when either gradient map is constant.
    """
    gx, gy = _gradient_magnitude(_gray(x)), _gradient_magnitude(_gray(y))
    if gx.shape != gy.shape:
        raise ValueError(f"frame sizes differ: {gx.shape} vs {gy.shape}")
    gx, gy = gx - gx.mean(), gy - gy.mean()
    denom = np.sqrt((gx * gx).sum() * (gy * gy).sum())
    if denom == 0:
        return 0.0
    return float(np.clip((gx * gy).sum() / denom, -1.0, 1.0))


class SurrogateBackend:
    """Mean-pooled tokens of the surrogate extractor's last layer."""

    def __init__(self, spec: Optional[ExtractorSpec] = None):
        self.spec = spec or ExtractorSpec()
        self.name = f"surrogate(seed={self.spec.seed},d={self.spec.embed_dim})"

    @torch.no_grad()
    def __call__(self, frames: torch.Tensor) -> np.ndarray:
        ext = get_extractor(self.spec)
        grid = ext(frames, LayerSelection((ext.depth - 1,)))[0]
        return grid.tokens.mean(-2).double().numpy()


class InceptionBackend:
    """2048-d pooled features of a torchvision Inception-v3 read from a state-dict file."""

    name = "inception-v3"

    def __init__(self, weights_path):
        from torchvision.models import inception_v3

        if not weights_path or not os.path.isfile(weights_path):
            raise WeightsLoadError(f"Inception weights not found: {weights_path}")
        net = inception_v3(weights=None, aux_logits=True, init_weights=False)
        net.load_state_dict(torch.load(weights_path, map_location="cpu", weights_only=True))
        net.fc = torch.nn.Identity()
        self.net = net.eval()

    @torch.no_grad()
    def __call__(self, frames: torch.Tensor) -> np.ndarray:
        if frames.shape[1] == 1:
            frames = frames.expand(-1, 3, -1, -1)
        x = torch.nn.functional.interpolate(frames, size=(299, 299), mode="bilinear",
                                            align_corners=False)
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        return self.net(((x + 1) / 2 - mean) / std).double().numpy()


def features(backend: Callable, frames: torch.Tensor, chunk: int = 64) -> FeatureSet:
    parts = [backend(frames[i:i + chunk]) for i in range(0, len(frames), chunk)]
    return FeatureSet(np.concatenate(parts), getattr(backend, "name", "custom"))


def _load_generator(checkpoint):
    from .trainer import build_networks, load_checkpoint

    config, step, payload = load_checkpoint(checkpoint)
    nets = build_networks(config)
    nets.generator.load_state_dict(payload["generator"])
    return nets.generator.eval(), config


def evaluate(checkpoint, dataset_root, backend: Union[str, Callable] = "surrogate",
             out_path=None, per_frame_csv=None, resolution: Optional[int] = None,
             in_channels: Optional[int] = None) -> dict:
    """Translate every source frame under ``dataset_root`` and score the result.

    ``checkpoint`` is a checkpoint path or any callable mapping a
    ``(B, C, H, W)`` batch to translated frames. ``backend`` is ``"surrogate"``,
    ``"inception:<weights path>"`` or a callable returning feature arrays.
    """
    if isinstance(checkpoint, (str, os.PathLike)):
        net, config = _load_generator(checkpoint)
        resolution = resolution or config.resolution
        in_channels = in_channels or config.in_channels
        surrogate_spec = config.extractor_spec() if config.extractor == "surrogate" else None
    else:
        net, surrogate_spec = checkpoint, None
        resolution = resolution or 256
        in_channels = in_channels or 1
    root = Path(dataset_root)
    if not root.is_dir():
        raise DatasetError(f"evaluation split not found: {root}")
    source, target = scan_dataset(root)

    if isinstance(backend, str):
        if backend == "surrogate":
            backend = SurrogateBackend(surrogate_spec or ExtractorSpec(resolution=resolution,
                                                                       region_size=4))
        elif backend.startswith("inception:"):
            backend = InceptionBackend(backend.split(":", 1)[1])
        else:
            raise ValueError(f"unknown feature backend {backend!r}")

    src_paths = source.all_paths()
    x = torch.stack([load_frame(p, in_channels, resolution) for p in src_paths])
    with torch.no_grad():
        y_hat = torch.cat([net(x[i:i + 16]) for i in range(0, len(x), 16)])
    real = torch.stack([load_frame(p, 3, resolution) for p in target.all_paths()])
    scores = [structure_score(a, b) for a, b in zip(x, y_hat)]
    report = {
        "fid": fid(features(backend, y_hat), features(backend, real)),
        "structure_score": float(np.mean(scores)),
        "backend": getattr(backend, "name", "custom"),
        "n_translated": len(y_hat),
        "n_real": len(real),
    }
    if out_path is not None:
        write_report(report, out_path)
    if per_frame_csv is not None:
        with open(per_frame_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "structure_score"])
            for p, s in zip(src_paths, scores):
                w.writerow([str(p.relative_to(root)), f"{s:.6f}"])
    return report


def write_report(report: dict, path) -> None:
    """One ``metric<TAB>backend<TAB>value<TAB>n`` line per metric, plus a JSON copy."""
    lines = ["metric\tbackend\tvalue\tn",
             f"fid\t{report['backend']}\t{report['fid']:.6f}\t{report['n_translated']}",
             f"structure_score\t-\t{report['structure_score']:.6f}\t{report['n_translated']}"]
    Path(path).write_text("\n".join(lines) + "\n")
    Path(str(path) + ".json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
