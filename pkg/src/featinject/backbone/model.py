from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np
import torch

from ..diffmath import NoiseSchedule, make_schedule
from .checkpoint import BackboneCheckpoint
from .hooks import HookContext, HookSiteId
from .prompts import PromptEmbedding, encode_prompt
from .unet import ToyUNet, UNetArch


class UnknownSiteError(ValueError):
    pass


class DenoiserBackbone(Protocol):
    """What the pipeline needs from a noise-prediction network."""

    schedule: NoiseSchedule
    checkpoint_id: str
    site_shapes: dict[HookSiteId, tuple[int, ...]]

    @property
    def input_shape(self) -> tuple[int, int, int]: ...

    def encode_prompt(self, text: str) -> PromptEmbedding: ...

    def denoise(self, x_t, emb, t: int, hooks: HookContext | None = None) -> torch.Tensor: ...


class LatentAdapter(Protocol):
    """Seam for latent-space backbones: maps images to model space and back."""

    def encode(self, image: torch.Tensor) -> torch.Tensor: ...

    def decode(self, latent: torch.Tensor) -> torch.Tensor: ...


class PixelAdapter:
    """Identity adapter; the toy backbone works directly on [-1, 1] pixels."""

    def encode(self, image):
        return image

    def decode(self, latent):
        return latent


def init_checkpoint(arch: UNetArch | None = None, seed: int = 0, num_train_steps: int = 1000,
                    schedule_kind: str = "linear") -> BackboneCheckpoint:
    arch = arch or UNetArch()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = ToyUNet(arch)
    params = {k: v.detach().numpy().astype(np.float32).copy() for k, v in net.state_dict().items()}
    return BackboneCheckpoint(arch, params, schedule_kind, num_train_steps, meta={"init_seed": str(seed)})


class ToyBackbone:
    """Immutable, shareable wrapper around a loaded toy U-Net."""

    def __init__(self, ckpt: BackboneCheckpoint):
        self.checkpoint = ckpt
        self.arch = ckpt.arch
        self.schedule = make_schedule(ckpt.num_train_steps, ckpt.schedule_kind)
        self.checkpoint_id = ckpt.checkpoint_id
        self.site_shapes = ckpt.arch.site_shapes()
        self.net = ToyUNet(ckpt.arch)
        self.net.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in ckpt.params.items()})
        self.net.eval().requires_grad_(False)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        r = self.arch.resolution
        return (self.arch.in_channels, r, r)

    def encode_prompt(self, text: str) -> PromptEmbedding:
        return encode_prompt(text)

    def sites(self, stage: str | None = None, kind: str | None = None) -> list[HookSiteId]:
        return sorted(
            s for s in self.site_shapes
            if (stage is None or s.stage == stage) and (kind is None or s.kind == kind)
        )

    def layers(self, stage: str, kind: str) -> list[int]:
        return [s.layer_index for s in self.sites(stage, kind)]

    def check_sites(self, sites) -> None:
        missing = [str(s) for s in sites if s not in self.site_shapes]
        if missing:
            raise UnknownSiteError(f"hook sites not present in this backbone: {missing}")

    def denoise(self, x_t, emb: PromptEmbedding | Sequence[PromptEmbedding], t: int,
                hooks: HookContext | None = None) -> torch.Tensor:
        """Predict the noise in ``x_t``; runs in float32, returns ``x_t``'s dtype.

        ``x_t`` is ``(B, C, H, W)`` or a single ``(C, H, W)`` image; ``emb`` is one
        embedding shared by the batch or one per batch element.
        """
        x = torch.as_tensor(x_t)
        single = x.dim() == 3
        if single:
            x = x.unsqueeze(0)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ValueError(f"input shape {tuple(x.shape[1:])} does not match backbone {self.input_shape}")
        t = self.schedule._check_t(t)
        if hooks is not None:
            self.check_sites(hooks.sites)
        embs = [emb] * x.shape[0] if isinstance(emb, PromptEmbedding) else list(emb)
        if len(embs) != x.shape[0]:
            raise ValueError(f"{len(embs)} prompt embeddings for a batch of {x.shape[0]}")
        text = torch.from_numpy(np.stack([e.tokens for e in embs]))
        tt = torch.full((x.shape[0],), t, dtype=torch.long)
        with torch.no_grad():
            eps = self.net(x.to(torch.float32), tt, text, hooks)
        eps = eps.to(x.dtype)
        return eps[0] if single else eps
