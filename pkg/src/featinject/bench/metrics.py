"""Metric providers: toy stand-ins for self-similarity, text fidelity and LPIPS,
plus declared adapters for the real pretrained backends."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from ..backbone.prompts import COLORS, parse_caption
from ..backbone.shapes import BACKGROUNDS

LOWER_IS_BETTER = "lower"
HIGHER_IS_BETTER = "higher"


class MetricUnavailableError(RuntimeError):
    pass


class MetricProvider(Protocol):
    id: str
    direction: str
    available: bool

    def score(self, guidance, output, prompt: str) -> float: ...


def _as_image(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got {x.shape}")
    return x


@dataclass
class PatchProjector:
    """Fixed random features of overlapping image patches (seeded, never trained)."""

    patch: int = 8
    stride: int = 4
    dim: int = 64
    seed: int = 1234
    _w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        fan_in = 3 * self.patch * self.patch
        self._w = rng.standard_normal((fan_in, self.dim)) / np.sqrt(fan_in)

    def patches(self, img) -> np.ndarray:
        img = _as_image(img)
        win = np.lib.stride_tricks.sliding_window_view(img, (self.patch, self.patch), axis=(1, 2))
        win = win[:, :: self.stride, :: self.stride]  # (3, gy, gx, p, p)
        gy, gx = win.shape[1:3]
        return win.transpose(1, 2, 0, 3, 4).reshape(gy * gx, -1)

    def __call__(self, img) -> np.ndarray:
        return np.tanh(self.patches(img) @ self._w)


def self_similarity(feats: np.ndarray) -> np.ndarray:
    f = feats - feats.mean(axis=0)
    f = f / (np.linalg.norm(f, axis=1, keepdims=True) + 1e-8)
    return f @ f.T


@dataclass
class ToyStructureDistance:
    """Mean squared difference of patch self-similarity matrices."""

    id: str = "toy-structure"
    direction: str = LOWER_IS_BETTER
    available: bool = True
    projector: PatchProjector = field(default_factory=PatchProjector)

    def score(self, guidance, output, prompt: str = "") -> float:
        a = self_similarity(self.projector(guidance))
        b = self_similarity(self.projector(output))
        return float(np.mean((a - b) ** 2))


_PALETTE_NAMES = list(COLORS) + [f"bg{i}" for i in range(len(BACKGROUNDS))]
_PALETTE = np.array(list(COLORS.values()) + list(BACKGROUNDS), dtype=np.float64) / 127.5 - 1.0


@dataclass
class ToyTextFidelity:
    """Fraction of object pixels whose nearest palette colour is the prompt's colour.

    Pixels nearest to a background colour are ignored; an image with no object
    pixels scores 0.
    """

    id: str = "toy-text"
    direction: str = HIGHER_IS_BETTER
    available: bool = True

    def score(self, guidance, output, prompt: str) -> float:
        color, _ = parse_caption(prompt)
        img = _as_image(output).reshape(3, -1).T
        d = ((img[:, None, :] - _PALETTE[None]) ** 2).sum(-1)
        nearest = d.argmin(axis=1)
        fg = nearest < len(COLORS)
        if not fg.any():
            return 0.0
        return float(np.mean(nearest[fg] == _PALETTE_NAMES.index(color)))


@dataclass
class PatchDeviation:
    """Mean L2 distance between corresponding patch features (pixel-LPIPS stand-in)."""

    id: str = "patch-lpips"
    direction: str = HIGHER_IS_BETTER
    available: bool = True
    projector: PatchProjector = field(default_factory=PatchProjector)

    def score(self, guidance, output, prompt: str = "") -> float:
        a, b = self.projector(guidance), self.projector(output)
        return float(np.mean(np.linalg.norm(a - b, axis=1)))


@dataclass
class ExternalAdapter:
    """Interface slot for a pretrained metric; plug a backend in via ``fn``."""

    id: str
    direction: str
    fn: object = None

    @property
    def available(self) -> bool:
        return self.fn is not None

    def score(self, guidance, output, prompt: str) -> float:
        if self.fn is None:
            raise MetricUnavailableError(f"metric {self.id!r} needs an external backend")
        return float(self.fn(guidance, output, prompt))


def clip_adapter(fn=None) -> ExternalAdapter:
    return ExternalAdapter("clip", HIGHER_IS_BETTER, fn)


def dino_adapter(fn=None) -> ExternalAdapter:
    return ExternalAdapter("dino-selfsim", LOWER_IS_BETTER, fn)


def lpips_adapter(fn=None) -> ExternalAdapter:
    return ExternalAdapter("lpips", HIGHER_IS_BETTER, fn)


TOY_METRICS = ("toy-structure", "toy-text", "patch-lpips")


def get_provider(metric_id: str):
    makers = {
        "toy-structure": ToyStructureDistance,
        "toy-text": ToyTextFidelity,
        "patch-lpips": PatchDeviation,
        "clip": clip_adapter,
        "dino-selfsim": dino_adapter,
        "lpips": lpips_adapter,
    }
    try:
        return makers[metric_id]()
    except KeyError:
        raise ValueError(f"unknown metric {metric_id!r}; choose from {sorted(makers)}") from None


def toy_metrics() -> list:
    return [get_provider(m) for m in TOY_METRICS]
