"""8-bit RGB <-> model-space ([-1, 1], channels first) conversion and file IO."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_model(rgb: np.ndarray) -> np.ndarray:
    """``(H, W, 3)`` uint8 -> ``(3, H, W)`` float64 in [-1, 1]."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) RGB, got {rgb.shape}")
    return rgb.astype(np.float64).transpose(2, 0, 1) / 127.5 - 1.0


def to_rgb(x) -> np.ndarray:
    """``(3, H, W)`` model-space array (numpy or torch) -> ``(H, W, 3)`` uint8."""
    x = np.asarray(x.detach().cpu() if hasattr(x, "detach") else x, dtype=np.float64)
    return np.rint((np.clip(x, -1, 1) + 1) * 127.5).astype(np.uint8).transpose(1, 2, 0)


def to_unit(x) -> np.ndarray:
    """Model space -> ``(3, H, W)`` float in [0, 1] (pixel units used by tolerances)."""
    x = np.asarray(x.detach().cpu() if hasattr(x, "detach") else x, dtype=np.float64)
    return (np.clip(x, -1, 1) + 1) / 2


def load_image(path, resolution: int | None = None) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    if resolution is not None and img.size != (resolution, resolution):
        img = img.resize((resolution, resolution), Image.BICUBIC)
    return to_model(np.asarray(img))


def save_image(path, x) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(x)
    if arr.dtype != np.uint8:
        arr = to_rgb(x)
    Image.fromarray(arr).save(path)
    return path


def save_unit_image(path, x) -> Path:
    """Save an ``(H, W, 3)`` float image in [0, 1] (e.g. a PCA rendering)."""
    arr = np.rint(np.clip(np.asarray(x, dtype=np.float64), 0, 1) * 255).astype(np.uint8)
    return save_image(path, arr)
