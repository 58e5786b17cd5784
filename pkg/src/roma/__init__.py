"""Unpaired video-to-video translation with cross-domain region similarity matching."""

from .config import TrainConfig, toy_config
from .crossim import cosine_match, cross_sim, global_loss, local_loss, sample_areas, temporal_loss
from .discriminator import DiscHead, build_multiscale, d_loss, g_adv_loss, pool_tokens
from .embedding import AreaSpec, ExtractorSpec, LayerSelection, TokenGrid, extract_tokens
from .generator import GeneratorConfig, build_generator, translate_clip, translate_frame
from .metrics import evaluate, fid, structure_score
from .trainer import Trainer, train

__version__ = "0.1.0"
