"""Noise-prediction backbone: toy U-Net, hook plumbing, prompts, checkpoints."""

from .attention import self_attention
from .checkpoint import (
    BackboneCheckpoint,
    CheckpointError,
    CheckpointVersionError,
    CorruptCheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from .hooks import HookContext, HookSiteId
from .model import DenoiserBackbone, LatentAdapter, PixelAdapter, ToyBackbone, UnknownSiteError, init_checkpoint
from .prompts import PromptEmbedding, VocabularyError, encode_prompt
from .shapes import ToyDataset, make_toy_dataset
from .train import TrainConfig, train_toy
from .unet import UNetArch

__all__ = [
    "BackboneCheckpoint",
    "CheckpointError",
    "CheckpointVersionError",
    "CorruptCheckpointError",
    "DenoiserBackbone",
    "HookContext",
    "HookSiteId",
    "LatentAdapter",
    "PixelAdapter",
    "PromptEmbedding",
    "ToyBackbone",
    "ToyDataset",
    "TrainConfig",
    "UNetArch",
    "UnknownSiteError",
    "VocabularyError",
    "encode_prompt",
    "init_checkpoint",
    "load_checkpoint",
    "make_toy_dataset",
    "save_checkpoint",
    "self_attention",
    "train_toy",
]
