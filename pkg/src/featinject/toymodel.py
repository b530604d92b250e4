"""Locate or build the shared toy checkpoint used by tests, scripts and the CLI."""

from __future__ import annotations

import logging
import os
from pathlib import Path

from .backbone import ToyBackbone, load_checkpoint, make_toy_dataset, save_checkpoint, train_toy

log = logging.getLogger(__name__)

DATASET_SIZE = 4096
DATASET_SEED = 1
TRAIN_STEPS = 2000
TRAIN_SEED = 0


def default_checkpoint_path() -> Path:
    env = os.environ.get("FEATINJECT_CHECKPOINT")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "artifacts" / "toy_shapes.ckpt"


def ensure_toy_checkpoint(path=None, steps: int = TRAIN_STEPS, seed: int = TRAIN_SEED) -> Path:
    """Return the checkpoint path, training it first (~15 min on one CPU) if absent."""
    path = Path(path) if path is not None else default_checkpoint_path()
    if not path.exists():
        log.info("training toy checkpoint -> %s", path)
        data = make_toy_dataset(DATASET_SIZE, seed=DATASET_SEED)
        save_checkpoint(train_toy(data, steps=steps, seed=seed), path)
    return path


def load_toy_backbone(path=None) -> ToyBackbone:
    return ToyBackbone(load_checkpoint(ensure_toy_checkpoint(path)))
