from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch

from ..diffmath import forward_noise, make_schedule
from .checkpoint import BackboneCheckpoint
from .model import init_checkpoint
from .prompts import encode_prompt
from .shapes import ToyDataset
from .unet import ToyUNet, UNetArch

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    warmup: int = 100
    prompt_dropout: float = 0.15  # teaches the unconditional (empty prompt) branch
    grad_clip: float = 1.0
    val_size: int = 64
    num_train_steps: int = 1000
    schedule: str = "linear"


def _embeddings(captions):
    cache = {}
    out = []
    for c in captions:
        if c not in cache:
            cache[c] = torch.from_numpy(np.array(encode_prompt(c).tokens))
        out.append(cache[c])
    return torch.stack(out)


def _noised_batch(images, captions, schedule, gen: torch.Generator, drop: float):
    b = images.shape[0]
    t = torch.randint(1, schedule.T + 1, (b,), generator=gen)
    z = torch.randn(images.shape, generator=gen, dtype=torch.float64)
    x0 = torch.as_tensor(images, dtype=torch.float64)
    x_t = torch.stack([forward_noise(x0[i], int(t[i]), z[i], schedule) for i in range(b)])
    keep = torch.rand(b, generator=gen) >= drop
    caps = [c if k else "" for c, k in zip(captions, keep.tolist())]
    return x_t.float(), t, _embeddings(caps), z.float()


def validation_loss(net: ToyUNet, val: ToyDataset, schedule, seed: int) -> float:
    gen = torch.Generator().manual_seed(seed)
    x_t, t, text, z = _noised_batch(val.images, val.captions, schedule, gen, drop=0.0)
    with torch.no_grad():
        losses = [
            torch.mean((net(x_t[i : i + 16], t[i : i + 16], text[i : i + 16]) - z[i : i + 16]) ** 2).item()
            * len(t[i : i + 16])
            for i in range(0, len(t), 16)
        ]
    return float(sum(losses) / len(t))


def train_toy(dataset: ToyDataset, steps: int, seed: int, config: TrainConfig | None = None,
              arch: UNetArch | None = None, progress=None) -> BackboneCheckpoint:
    """Train the toy denoiser with the noise-prediction objective.

    The last ``config.val_size`` images are held out for the validation loss,
    which is recorded (before and after training) in the checkpoint metadata.
    """
    cfg = config or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    arch = arch or UNetArch()
    expect = (arch.in_channels, arch.resolution, arch.resolution)
    if tuple(dataset.images.shape[1:]) != expect:
        raise ValueError(f"dataset images {tuple(dataset.images.shape[1:])} do not match resolution {expect}")
    if len(dataset) <= cfg.val_size:
        raise ValueError(f"dataset needs more than val_size={cfg.val_size} images")
    train, val = dataset.split(cfg.val_size)
    schedule = make_schedule(cfg.num_train_steps, cfg.schedule)

    init = init_checkpoint(arch, seed=seed, num_train_steps=cfg.num_train_steps, schedule_kind=cfg.schedule)
    net = ToyUNet(arch)
    net.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in init.params.items()})
    val_seed = seed + 7919
    init_loss = validation_loss(net, val, schedule, val_seed)

    if steps > 0:
        net.train()
        opt = torch.optim.AdamW(net.parameters(), lr=cfg.lr, weight_decay=0.0)
        rng = np.random.default_rng(seed)
        gen = torch.Generator().manual_seed(seed)
        for step in range(steps):
            lr = cfg.lr * min(1.0, (step + 1) / cfg.warmup)
            lr *= 0.1 + 0.9 * 0.5 * (1 + math.cos(math.pi * step / steps))
            for g in opt.param_groups:
                g["lr"] = lr
            idx = rng.integers(len(train), size=cfg.batch_size)
            x_t, t, text, z = _noised_batch(
                train.images[idx], [train.captions[i] for i in idx], schedule, gen, cfg.prompt_dropout
            )
            loss = torch.mean((net(x_t, t, text) - z) ** 2)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
            opt.step()
            if progress is not None:
                progress(step, loss.item())
            if step % 200 == 0:
                log.info("step %d loss %.4f", step, loss.item())
        net.eval()

    final_loss = validation_loss(net, val, schedule, val_seed) if steps > 0 else init_loss
    params = {k: v.detach().numpy().astype(np.float32).copy() for k, v in net.state_dict().items()}
    meta = {
        "init_seed": str(seed),
        "train_steps": str(steps),
        "train_images": str(len(train)),
        "val_loss_init": f"{init_loss:.6f}",
        "val_loss_final": f"{final_loss:.6f}",
    }
    return BackboneCheckpoint(arch, params, cfg.schedule, cfg.num_train_steps, meta)
