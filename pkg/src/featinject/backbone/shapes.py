"""Synthetic colored-primitive images with toy captions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prompts import COLORS, SHAPES, caption

BACKGROUNDS = (
    (18, 18, 22),
    (70, 70, 75),
    (120, 115, 105),
    (30, 45, 70),
    (60, 40, 30),
)
SUPERSAMPLE = 3


@dataclass(frozen=True)
class ShapeSpec:
    color: str
    shape: str
    background: int
    cx: float  # centre, fraction of width
    cy: float
    size: float  # radius, fraction of width
    angle: float  # radians

    @property
    def caption(self) -> str:
        return caption(self.color, self.shape)


def _mask(spec: ShapeSpec, n: int) -> np.ndarray:
    coords = (np.arange(n) + 0.5) / n
    x, y = np.meshgrid(coords, coords)
    dx, dy = x - spec.cx, y - spec.cy
    c, s = np.cos(spec.angle), np.sin(spec.angle)
    u, v = c * dx + s * dy, -s * dx + c * dy
    r = spec.size
    if spec.shape == "circle":
        return u**2 + v**2 <= r**2
    if spec.shape == "ring":
        d2 = u**2 + v**2
        return (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)
    if spec.shape == "square":
        return (np.abs(u) <= 0.8 * r) & (np.abs(v) <= 0.8 * r)
    if spec.shape == "cross":
        w = 0.3 * r
        return ((np.abs(u) <= r) & (np.abs(v) <= w)) | ((np.abs(v) <= r) & (np.abs(u) <= w))
    if spec.shape == "triangle":
        # equilateral, apex up in the rotated frame
        h = 1.5 * r
        top, base = -r, -r + h
        inside_y = (v >= top) & (v <= base)
        half = (v - top) / h * (h / np.sqrt(3))
        return inside_y & (np.abs(u) <= half)
    raise ValueError(f"unknown shape {spec.shape!r}")


def render(spec: ShapeSpec, resolution: int = 64) -> np.ndarray:
    """Anti-aliased ``(H, W, 3)`` uint8 rendering."""
    n = resolution * SUPERSAMPLE
    m = _mask(spec, n).astype(np.float64)
    m = m.reshape(resolution, SUPERSAMPLE, resolution, SUPERSAMPLE).mean(axis=(1, 3))[..., None]
    fg = np.array(COLORS[spec.color], dtype=np.float64)
    bg = np.array(BACKGROUNDS[spec.background], dtype=np.float64)
    return np.rint(m * fg + (1 - m) * bg).astype(np.uint8)


def random_spec(rng: np.random.Generator, color: str | None = None, shape: str | None = None) -> ShapeSpec:
    size = rng.uniform(0.16, 0.32)
    return ShapeSpec(
        color=color or str(rng.choice(list(COLORS))),
        shape=shape or str(rng.choice(SHAPES)),
        background=int(rng.integers(len(BACKGROUNDS))),
        cx=rng.uniform(size + 0.04, 0.96 - size),
        cy=rng.uniform(size + 0.04, 0.96 - size),
        size=size,
        angle=rng.uniform(0, 2 * np.pi),
    )


@dataclass
class ToyDataset:
    images: np.ndarray  # (N, 3, H, W) float32 in [-1, 1]
    captions: list[str]

    def __len__(self) -> int:
        return len(self.captions)

    def split(self, n_val: int) -> tuple["ToyDataset", "ToyDataset"]:
        return (
            ToyDataset(self.images[:-n_val], self.captions[:-n_val]),
            ToyDataset(self.images[-n_val:], self.captions[-n_val:]),
        )


def make_toy_dataset(n: int, seed: int = 0, resolution: int = 64) -> ToyDataset:
    from ..imageio import to_model

    rng = np.random.default_rng(seed)
    specs = [random_spec(rng) for _ in range(n)]
    images = np.stack([to_model(render(s, resolution)) for s in specs]).astype(np.float32)
    return ToyDataset(images, [s.caption for s in specs])
