"""Alternating discriminator / generator optimisation, checkpoints and logs.

Each step draws one batch of source fragments and an independent set of real
target frames, takes one discriminator step on detached translations and then
one generator step on

    L_G = adv + lambda_global * L_g + lambda_local * L_l + lambda_temporal * L_tem

Sampling for step ``s`` depends only on ``(seed, s)``, so a run resumed from a
checkpoint replays exactly the draws of an uninterrupted one.
"""

from __future__ import annotations

import io
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import torch
import torch.nn as nn

from .config import TrainConfig, parse_config, serialize_config
from .crossim import global_loss, local_loss, sample_areas, temporal_loss_stacked
from .data import FrameStore, sample_fragments, sample_target_frames, scan_dataset
from .discriminator import DiscHead, build_multiscale, d_loss_from_logits, discriminate, \
    g_adv_from_logits
from .embedding import LayerSelection, TokenGrid, build_extractor
from .errors import ConfigError, TrainingError
from .generator import ResnetGenerator, build_generator

__all__ = ["Batch", "CHECKPOINT_MAGIC", "Networks", "Trainer", "build_networks",
           "d_step_loss", "g_step_loss", "load_checkpoint", "read_checkpoint_header",
           "save_checkpoint", "train"]

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"ROMA-CKPT 1\n"
COMPONENTS = ("adv", "global", "local", "temporal")


@dataclass
class Batch:
    source: torch.Tensor  # (B, T, C, H, W) fragments
    target: torch.Tensor  # (K, 3, H, W) real target frames


@dataclass
class Networks:
    generator: ResnetGenerator
    head: DiscHead
    extractor: nn.Module
    layers: LayerSelection
    disc_layer: int

    def token_layers(self) -> LayerSelection:
        """Layers needed for one pass: the matching layers plus the discriminator's."""
        ids = sorted(set(self.layers.layer_ids) | {self.disc_layer})
        return LayerSelection(tuple(ids))


def build_networks(config: TrainConfig) -> Networks:
    torch.manual_seed(config.seed)
    extractor = build_extractor(config.extractor_spec())
    extractor.eval()
    for p in extractor.parameters():
        p.requires_grad_(False)
    layers = config.layer_selection() or extractor.default_layers()
    for i in layers:
        if i >= extractor.depth:
            raise ConfigError(f"layer {i} out of range for extractor depth {extractor.depth}")
    generator = build_generator(config.generator_config(), seed=config.seed)
    head = DiscHead(config.embed_dim, config.disc_hidden)
    gen = torch.Generator().manual_seed(config.seed + 1)
    with torch.no_grad():
        for m in head.modules():
            if isinstance(m, nn.Linear):
                bound = 1 / math.sqrt(m.in_features)
                m.weight.copy_(torch.rand(m.weight.shape, generator=gen) * 2 * bound - bound)
                m.bias.zero_()
    return Networks(generator, head, extractor, layers, extractor.depth - 1)


def _tokens(nets: Networks, frames: torch.Tensor) -> dict[int, TokenGrid]:
    grids = nets.extractor(frames, nets.token_layers())
    return {g.layer_id: g for g in grids}


def _split_time(grid: TokenGrid, b: int, t: int) -> TokenGrid:
    return grid.with_tokens(grid.tokens.reshape(b, t, *grid.tokens.shape[-2:]))


def translate_fragments(nets: Networks, source: torch.Tensor) -> torch.Tensor:
    b, t = source.shape[:2]
    fake = nets.generator(source.flatten(0, 1))
    return fake.reshape(b, t, *fake.shape[1:])


def g_step_loss(batch: Batch, nets: Networks, config: TrainConfig, step: int = 0,
                fake: Optional[torch.Tensor] = None):
    """Generator objective for one batch.

    Returns ``(total, components)`` with components ``adv``, ``global``,
    ``local`` and ``temporal`` as tensors. ``fake`` may carry precomputed
    translations of ``batch.source`` (with graph).
    """
    b, t = batch.source.shape[:2]
    if fake is None:
        fake = translate_fragments(nets, batch.source)
    with torch.no_grad():
        x_tok = _tokens(nets, batch.source.flatten(0, 1))
    y_tok = _tokens(nets, fake.flatten(0, 1))
    xg = [x_tok[i] for i in nets.layers]
    yg = [y_tok[i] for i in nets.layers]

    comps = {"global": global_loss(xg, yg)}
    grid = xg[0]
    areas = sample_areas(grid.rows, grid.cols, config.num_areas, config.area_rows,
                         config.area_cols, (config.seed, step, 2))
    comps["local"] = local_loss(xg, yg, areas) if areas else fake.new_zeros(())
    comps["temporal"] = temporal_loss_stacked([_split_time(g, b, t) for g in xg],
                                              [_split_time(g, b, t) for g in yg], config.dt)
    fake_ms = build_multiscale(y_tok[nets.disc_layer], config.scales)
    comps["adv"] = g_adv_from_logits(discriminate(nets.head, fake_ms), config.non_saturating)

    total = (comps["adv"] + config.lambda_global * comps["global"]
             + config.lambda_local * comps["local"] + config.lambda_temporal * comps["temporal"])
    if not torch.isfinite(total):
        raise TrainingError(f"non-finite generator loss at step {step}",
                            {k: float(v.detach()) for k, v in comps.items()})
    return total, comps


def d_step_loss(batch: Batch, nets: Networks, config: TrainConfig,
                fake: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Discriminator objective on real target frames vs detached translations."""
    if fake is None:
        with torch.no_grad():
            fake = translate_fragments(nets, batch.source)
    assert not fake.requires_grad, "generator output must be detached for the D step"
    fake = fake.flatten(0, 1) if fake.ndim == 5 else fake
    with torch.no_grad():
        real_grid = _tokens(nets, batch.target)[nets.disc_layer]
        fake_grid = _tokens(nets, fake)[nets.disc_layer]
    real = discriminate(nets.head, build_multiscale(real_grid, config.scales))
    fake_logits = discriminate(nets.head, build_multiscale(fake_grid, config.scales))
    loss = d_loss_from_logits(real, fake_logits)
    if not torch.isfinite(loss):
        raise TrainingError("non-finite discriminator loss", {"d": float(loss.detach())})
    return loss


# --------------------------------------------------------------------------- checkpoints

def save_checkpoint(path, config: TrainConfig, step: int, payload: dict) -> None:
    """Binary checkpoint: magic line, one JSON header line, then a torch pickle."""
    header = {"format": 1, "step": step, "fingerprint": config.fingerprint(),
              "config": serialize_config(config)}
    buf = io.BytesIO()
    torch.save(payload, buf)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(buf.getvalue())
    tmp.replace(path)


def _read(path):
    with open(path, "rb") as fh:
        if fh.readline() != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a ROMA checkpoint")
        header = json.loads(fh.readline())
        body = fh.read()
    return header, body


def read_checkpoint_header(path) -> dict:
    return _read(path)[0]


def load_checkpoint(path):
    """``(config, step, payload)`` of a checkpoint file."""
    header, body = _read(path)
    payload = torch.load(io.BytesIO(body), map_location="cpu", weights_only=False)
    return parse_config(header["config"]), header["step"], payload


# --------------------------------------------------------------------------- loop

class Trainer:
    """Owns networks, optimisers and the step counter of one training run."""

    def __init__(self, config: TrainConfig, dataset_root, out_dir=None):
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.source, self.target = scan_dataset(dataset_root)
        self.nets = build_networks(config)
        self.opt_g = torch.optim.Adam(self.nets.generator.parameters(), lr=config.lr,
                                      betas=(config.beta1, config.beta2))
        self.opt_d = torch.optim.Adam(self.nets.head.parameters(), lr=config.lr,
                                      betas=(config.beta1, config.beta2))
        self.source_store = FrameStore(config.in_channels, config.resolution)
        self.target_store = FrameStore(3, config.resolution)
        self.step = 0

    def batch(self, step: int) -> Batch:
        cfg = self.config
        frags = sample_fragments(self.source, cfg.dt, cfg.batch, cfg.seed, step)
        source = torch.stack([self.source_store.get(f.paths) for f in frags])
        n_real = cfg.batch * (cfg.dt + 1)
        target = self.target_store.get(sample_target_frames(self.target, n_real, cfg.seed, step))
        return Batch(source, target)

    def train_step(self) -> dict:
        """One D step then one G step; returns the step's log record."""
        nets, cfg, step = self.nets, self.config, self.step
        t0 = time.perf_counter()
        batch = self.batch(step)
        nets.generator.train()

        fake = translate_fragments(nets, batch.source)

        nets.head.requires_grad_(True)
        self.opt_d.zero_grad(set_to_none=True)
        loss_d = d_step_loss(batch, nets, cfg, fake=fake.detach())
        loss_d.backward()
        self.opt_d.step()

        nets.head.requires_grad_(False)
        self.opt_g.zero_grad(set_to_none=True)
        total, comps = g_step_loss(batch, nets, cfg, step=step, fake=fake)
        total.backward()
        self.opt_g.step()
        nets.head.requires_grad_(True)

        self.step += 1
        record = {"step": step, "loss_d": loss_d.item(), "loss_g": total.item()}
        record.update({k: comps[k].item() for k in COMPONENTS})
        record["wall_time"] = time.perf_counter() - t0
        return record

    def state(self) -> dict:
        return {
            "generator": self.nets.generator.state_dict(),
            "head": self.nets.head.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "step": self.step,
            "torch_rng": torch.get_rng_state(),
        }

    def load_state(self, payload: dict) -> None:
        self.nets.generator.load_state_dict(payload["generator"])
        self.nets.head.load_state_dict(payload["head"])
        self.opt_g.load_state_dict(payload["opt_g"])
        self.opt_d.load_state_dict(payload["opt_d"])
        self.step = int(payload["step"])
        torch.set_rng_state(payload["torch_rng"])

    def save(self, path) -> None:
        save_checkpoint(path, self.config, self.step, self.state())

    def resume(self, path) -> None:
        config, _, payload = load_checkpoint(path)
        if config.fingerprint() != self.config.fingerprint():
            raise ConfigError(f"checkpoint {path} was written with a different configuration")
        self.load_state(payload)

    def run(self, steps: Optional[int] = None, log_path=None) -> list[dict]:
        """Train until ``steps`` (default ``config.steps``) updates have been made."""
        steps = self.config.steps if steps is None else steps
        records = []
        out = self.out_dir
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            if self.step == 0:
                self.save(out / "latest.ckpt")
        log_fh = open(log_path, "a") if log_path is not None else None
        try:
            while self.step < steps:
                record = self.train_step()
                records.append(record)
                if log_fh is not None and record["step"] % self.config.log_every == 0:
                    log_fh.write(json.dumps(record) + "\n")
                    log_fh.flush()
                if out is not None and (self.step % self.config.checkpoint_every == 0
                                        or self.step == steps):
                    self.save(out / "latest.ckpt")
        finally:
            if log_fh is not None:
                log_fh.close()
        return records


def train(config: TrainConfig, dataset_root, out_dir, resume: bool = False) -> Trainer:
    """Run a full training job writing ``log.jsonl`` and ``latest.ckpt`` to ``out_dir``.

    With ``resume`` the run continues from ``out_dir/latest.ckpt``. A non-finite
    loss raises :class:`TrainingError`; the last checkpoint on disk is kept.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(config, dataset_root, out)
    ckpt = out / "latest.ckpt"
    if resume:
        if not ckpt.exists():
            raise FileNotFoundError(f"no checkpoint to resume from: {ckpt}")
        trainer.resume(ckpt)
        log.info("resumed from %s at step %d", ckpt, trainer.step)
    trainer.run(log_path=out / "log.jsonl")
    return trainer
