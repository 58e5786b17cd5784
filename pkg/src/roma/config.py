"""Training configuration and its plain-text ``key = value`` file format."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from typing import Optional

from .embedding import ExtractorSpec, LayerSelection
from .errors import ConfigError
from .generator import GeneratorConfig

__all__ = ["TrainConfig", "parse_config", "serialize_config", "load_config",
           "save_config", "toy_config"]

ADV_SATURATING = "saturating"
ADV_NON_SATURATING = "non-saturating"

# fields that do not change what a step computes; excluded from the fingerprint
_RUN_ONLY = ("steps", "log_every", "checkpoint_every", "data_root")


@dataclass(frozen=True)
class TrainConfig:
    # loss weights: global, local, temporal
    lambda_global: float = 5.0
    lambda_local: float = 5.0
    lambda_temporal: float = 1.0
    dt: int = 2
    num_areas: int = 64
    area_rows: int = 5
    area_cols: int = 5
    scales: tuple[int, ...] = (3, 5, 7)
    # empty = extractor default (4 evenly spaced layers ending at the last)
    layers: tuple[int, ...] = ()
    adv_loss: str = ADV_SATURATING
    disc_hidden: int = 256
    # extractor
    extractor: str = "surrogate"
    region_size: int = 16
    embed_dim: int = 64
    extractor_seed: int = 0
    weights_path: str = ""
    resolution: int = 256
    surrogate_layers: int = 4
    # generator
    generator_preset: str = "standard"
    in_channels: int = 1
    # optimisation
    optimizer: str = "adam"
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch: int = 1
    steps: int = 1000
    seed: int = 0
    log_every: int = 1
    checkpoint_every: int = 500
    data_root: str = ""

    def __post_init__(self):
        for name in ("lambda_global", "lambda_local", "lambda_temporal"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.dt < 0:
            raise ConfigError("dt must be >= 0")
        if self.num_areas < 0 or self.area_rows < 1 or self.area_cols < 1:
            raise ConfigError("invalid local-area settings")
        if not self.scales or any(k <= 0 for k in self.scales):
            raise ConfigError(f"scales must be positive, got {self.scales}")
        if self.adv_loss not in (ADV_SATURATING, ADV_NON_SATURATING):
            raise ConfigError(f"adv_loss must be {ADV_SATURATING!r} or {ADV_NON_SATURATING!r}")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.in_channels not in (1, 3):
            raise ConfigError("in_channels must be 1 or 3")
        if self.batch < 1 or self.steps < 0:
            raise ConfigError("batch must be >= 1 and steps >= 0")
        if self.log_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("log_every and checkpoint_every must be >= 1")
        grid = self.resolution // self.region_size if self.region_size > 0 else 0
        if max(self.scales) > grid:
            raise ConfigError(f"scale {max(self.scales)} exceeds the {grid}x{grid} region grid")
        if self.area_rows > grid or self.area_cols > grid:
            raise ConfigError(f"area {self.area_rows}x{self.area_cols} exceeds the region grid")
        self.extractor_spec()  # validates extractor fields

    def extractor_spec(self) -> ExtractorSpec:
        return ExtractorSpec(kind=self.extractor, region_size=self.region_size,
                             embed_dim=self.embed_dim, seed=self.extractor_seed,
                             weights_path=self.weights_path or None,
                             resolution=self.resolution, num_layers=self.surrogate_layers)

    def layer_selection(self) -> Optional[LayerSelection]:
        return LayerSelection(self.layers) if self.layers else None

    def generator_config(self) -> GeneratorConfig:
        try:
            return GeneratorConfig.preset(self.generator_preset, self.in_channels, self.resolution)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def non_saturating(self) -> bool:
        return self.adv_loss == ADV_NON_SATURATING

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def fingerprint(self) -> str:
        text = serialize_config(self, skip=_RUN_ONLY)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def toy_config(**overrides) -> TrainConfig:
    """Desk-scale settings: 64px frames, 4px regions (16x16 grid), tiny generator.

    The adversarial term is non-saturating here: with the saturating form the
    tiny generator drifts toward striped textures before the structural terms
    take hold.
    """
    base = dict(resolution=64, region_size=4, embed_dim=64, area_rows=5, area_cols=5,
                generator_preset="tiny", adv_loss="non-saturating", steps=2000,
                checkpoint_every=500)
    base.update(overrides)
    return TrainConfig(**base)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: TrainConfig, skip=()) -> str:
    lines = [f"{f.name} = {_format(getattr(config, f.name))}"
             for f in fields(config) if f.name not in skip]
    return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _convert(name: str, raw: str):
    kind = _TYPES[name]
    if kind == "float":
        return float(raw)
    if kind == "int":
        return int(raw)
    if kind.startswith("tuple"):
        return tuple(int(v) for v in raw.split(",") if v.strip())
    return raw


def parse_config(text: str, base: Optional[TrainConfig] = None) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {raw!r}") from exc
    return dataclasses.replace(base or TrainConfig(), **values)


def load_config(path) -> TrainConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def save_config(config: TrainConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_config(config))
