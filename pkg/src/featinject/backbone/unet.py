"""Toy 3-level U-Net with named hook sites.

Layout at 64x64 input: a 2x2 space-to-depth stem, then feature grids of 32x32
(conv only), 16x16 and 8x8 (self + cross attention), and a depth-to-space head. Layer numbering:

    encoder 1-3 @32, 4-6 @16 (attn), 7-8 @8 (attn)
    decoder 1-3 @8 (attn), 4-7 @16 (attn), 8-11 @32

Decoder layer 4 is the first block after the coarsest level, the toy stand-in
for the intermediate "layer 4"; layers 8-11 are the deep, high-resolution
blocks closest to the output. The correspondence to Stable Diffusion's
numbering is a naming convention only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .attention import self_attention
from .hooks import HookContext, HookSiteId
from .prompts import EMBED_DIM


@dataclass(frozen=True)
class UNetArch:
    resolution: int = 64
    in_channels: int = 3
    channels: tuple[int, int, int] = (24, 48, 64)
    heads: tuple[int, int] = (2, 2)  # at 16x16 and 8x8
    encoder_blocks: tuple[int, int, int] = (3, 3, 2)
    decoder_blocks: tuple[int, int, int] = (3, 4, 4)  # coarsest level first
    time_dim: int = 64
    text_dim: int = EMBED_DIM
    groups: int = 8

    def to_dict(self) -> dict[str, str]:
        def fmt(v):
            return ",".join(map(str, v)) if isinstance(v, tuple) else str(v)

        return {k: fmt(getattr(self, k)) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "UNetArch":
        kwargs = {}
        for name, f in cls.__dataclass_fields__.items():
            if name not in d:
                raise KeyError(f"architecture descriptor missing {name!r}")
            raw = d[name]
            default = f.default
            kwargs[name] = tuple(int(x) for x in raw.split(",")) if isinstance(default, tuple) else int(raw)
        return cls(**kwargs)

    def level_sizes(self) -> tuple[int, int, int]:
        r = self.resolution // 2
        return (r, r // 2, r // 4)

    def site_shapes(self) -> dict[HookSiteId, tuple[int, ...]]:
        """Declared per-sample shape of every hook site."""
        sizes = self.level_sizes()
        shapes: dict[HookSiteId, tuple[int, ...]] = {}

        def add(stage, layer, level):
            c, hw = self.channels[level], sizes[level]
            shapes[HookSiteId(stage, layer, "resblock_features")] = (c, hw, hw)
            if level > 0:
                h = self.heads[level - 1]
                n = hw * hw
                shapes[HookSiteId(stage, layer, "attention_queries")] = (h, n, c // h)
                shapes[HookSiteId(stage, layer, "attention_keys")] = (h, n, c // h)
                shapes[HookSiteId(stage, layer, "attention_matrix")] = (h, n, n)

        layer = 1
        for level, count in enumerate(self.encoder_blocks):
            for _ in range(count):
                add("encoder", layer, level)
                layer += 1
        layer = 1
        for level, count in zip((2, 1, 0), self.decoder_blocks):
            for _ in range(count):
                add("decoder", layer, level)
                layer += 1
        return shapes


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, cin, cout, time_dim, groups):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(time_dim, cout)
        self.norm2 = nn.GroupNorm(groups, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class SelfAttention(nn.Module):
    def __init__(self, channels, heads, groups):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(groups, channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(channels, channels, bias=False)
        self.to_v = nn.Linear(channels, channels, bias=False)
        self.out = nn.Linear(channels, channels)

    def split(self, x):
        b, n, c = x.shape
        return x.view(b, n, self.heads, c // self.heads).transpose(1, 2)

    def tokens(self, x):
        b, c, h, w = x.shape
        return self.norm(x).flatten(2).transpose(1, 2)

    def forward(self, x, hooks: HookContext, stage: str, layer: int):
        b, c, h, w = x.shape
        tok = self.tokens(x)
        scale = (c // self.heads) ** -0.5
        q = hooks.visit(HookSiteId(stage, layer, "attention_queries"), self.split(self.to_q(tok)) * scale)
        k = hooks.visit(HookSiteId(stage, layer, "attention_keys"), self.split(self.to_k(tok)))
        v = self.split(self.to_v(tok))
        site = HookSiteId(stage, layer, "attention_matrix")
        out, A = self_attention(q, k, v, override_A=hooks.override_for(site, _attn_like(q, k)))
        A = hooks.visit(site, A)
        hooks.observe(f"{stage}.{layer}.self", A)
        out = out.transpose(1, 2).reshape(b, h * w, c)
        return x + self.out(out).transpose(1, 2).view(b, c, h, w)


def _attn_like(q, k):
    # shape carrier for override validation; never materialised
    return torch.empty(q.shape[:-1] + (k.shape[-2],), dtype=q.dtype, device="meta")


class CrossAttention(nn.Module):
    def __init__(self, channels, text_dim, heads, groups):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(groups, channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(text_dim, channels, bias=False)
        self.to_v = nn.Linear(text_dim, channels, bias=False)
        self.out = nn.Linear(channels, channels)

    def forward(self, x, text, hooks: HookContext, name: str):
        b, c, h, w = x.shape
        d = c // self.heads
        tok = self.norm(x).flatten(2).transpose(1, 2)
        q = self.to_q(tok).view(b, h * w, self.heads, d).transpose(1, 2) * d**-0.5
        k = self.to_k(text).view(b, -1, self.heads, d).transpose(1, 2)
        v = self.to_v(text).view(b, -1, self.heads, d).transpose(1, 2)
        out, A = self_attention(q, k, v)
        hooks.observe(name, A)
        out = out.transpose(1, 2).reshape(b, h * w, c)
        return x + self.out(out).transpose(1, 2).view(b, c, h, w)


class Layer(nn.Module):
    """Residual block, then (at attention levels) self- and cross-attention."""

    def __init__(self, cin, cout, arch: UNetArch, heads: int | None):
        super().__init__()
        self.res = ResBlock(cin, cout, arch.time_dim, arch.groups)
        self.attn = SelfAttention(cout, heads, arch.groups) if heads else None
        self.cross = CrossAttention(cout, arch.text_dim, heads, arch.groups) if heads else None

    def forward(self, x, temb, text, hooks, stage, layer):
        h = self.res(x, temb)
        h = hooks.visit(HookSiteId(stage, layer, "resblock_features"), h)
        if self.attn is not None:
            h = self.attn(h, hooks, stage, layer)
            h = self.cross(h, text, hooks, f"{stage}.{layer}.cross")
        return h


class ToyUNet(nn.Module):
    def __init__(self, arch: UNetArch):
        super().__init__()
        self.arch = arch
        c0, c1, c2 = arch.channels
        td = arch.time_dim
        self.time_mlp = nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
        # space-to-depth keeps all convolutions at 32x32 and coarser
        self.stem = nn.Sequential(nn.PixelUnshuffle(2), nn.Conv2d(4 * arch.in_channels, c0, 3, padding=1))
        heads = (None, arch.heads[0], arch.heads[1])

        self.enc = nn.ModuleList()
        self.enc_down = nn.ModuleList()
        for level, count in enumerate(arch.encoder_blocks):
            c = arch.channels[level]
            self.enc.append(nn.ModuleList(Layer(c, c, arch, heads[level]) for _ in range(count)))
            if level < 2:
                self.enc_down.append(nn.Conv2d(c, arch.channels[level + 1], 3, stride=2, padding=1))

        self.dec = nn.ModuleList()
        self.dec_up = nn.ModuleList()
        for i, (level, count) in enumerate(zip((2, 1, 0), arch.decoder_blocks)):
            c = arch.channels[level]
            cin = c if level == 2 else 2 * c  # finer levels concatenate the encoder skip
            blocks = [Layer(cin, c, arch, heads[level])]
            blocks += [Layer(c, c, arch, heads[level]) for _ in range(count - 1)]
            self.dec.append(nn.ModuleList(blocks))
            if level > 0:
                self.dec_up.append(nn.Conv2d(c, arch.channels[level - 1], 3, padding=1))

        self.head_norm = nn.GroupNorm(arch.groups, 2 * c0)
        self.head_out = nn.Conv2d(2 * c0, 4 * arch.in_channels, 3, padding=1)
        self.head_shuffle = nn.PixelShuffle(2)
        nn.init.zeros_(self.head_out.weight)
        nn.init.zeros_(self.head_out.bias)

    def forward(self, x, t, text, hooks: HookContext | None = None):
        hooks = hooks if hooks is not None else HookContext()
        temb = self.time_mlp(timestep_embedding(t, self.arch.time_dim))
        h0 = self.stem(x)
        h = h0
        skips = []
        layer = 1
        for level, blocks in enumerate(self.enc):
            for block in blocks:
                h = block(h, temb, text, hooks, "encoder", layer)
                layer += 1
            if level < 2:
                skips.append(h)
                h = self.enc_down[level](h)
        layer = 1
        for i, blocks in enumerate(self.dec):
            if i > 0:
                h = self.dec_up[i - 1](F.interpolate(h, scale_factor=2.0, mode="nearest"))
                h = torch.cat([h, skips.pop()], dim=1)
            for block in blocks:
                h = block(h, temb, text, hooks, "decoder", layer)
                layer += 1
        h = F.silu(self.head_norm(torch.cat([h, h0], dim=1)))
        return self.head_shuffle(self.head_out(h))
