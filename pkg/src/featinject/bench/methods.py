"""Translation methods over benchmark pairs, with guidance runs shared across variants."""

from __future__ import annotations

import threading
from functools import lru_cache

import numpy as np

from ..imageio import load_image
from ..pipeline import (
    SAMPLE_CLIP, GenerationSpec, GuidanceRun, TranslationRequest, apply_overrides, apply_preset,
    run_guidance, sample, sdedit, seeded_noise, translate,
)
from .pairs import BenchmarkPair

# Benchmarks run real pairs with the 50-step inversion instead of the 1000-step one
TOY_REAL_OVERRIDES = {"n_inv_steps": 50, "guidance_steps": 50}


def request_for_pair(pair: BenchmarkPair, backbone, overrides: dict | None = None,
                     seed: int = 0) -> TranslationRequest:
    if pair.is_generated:
        req = TranslationRequest(pair.target_prompt, guidance_spec=GenerationSpec(pair.source_prompt, pair.seed),
                                 seed=seed)
        req = apply_preset(req, "default_generated")
    else:
        image = _load(pair.image, backbone.input_shape[-1])
        req = TranslationRequest(pair.target_prompt, guidance_image=image,
                                 source_prompt=pair.source_prompt, seed=seed)
        req = apply_overrides(apply_preset(req, "default_real"), TOY_REAL_OVERRIDES)
    return apply_overrides(req, overrides or {})


@lru_cache(maxsize=256)
def _load(path: str, resolution: int) -> np.ndarray:
    img = load_image(path, resolution)
    img.setflags(write=False)
    return img


class GuidanceCache:
    """One guidance run per pair, recording every site any variant may inject."""

    def __init__(self, backbone, sites):
        self.backbone = backbone
        self.sites = sorted(set(sites))
        self._runs: dict[tuple, GuidanceRun] = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(req: TranslationRequest) -> tuple:
        ref = ("image", id(req.guidance_image)) if req.is_real else ("spec", req.guidance_spec)
        return ref, req.n_steps, req.n_inv_steps, req.guidance_steps

    def get(self, req: TranslationRequest) -> GuidanceRun:
        k = self.key(req)
        with self._lock:
            run = self._runs.get(k)
        if run is None:
            run = run_guidance(req, self.backbone, self.sites)
            with self._lock:
                run = self._runs.setdefault(k, run)
        return run


def guidance_image(pair: BenchmarkPair, req: TranslationRequest, run: GuidanceRun | None):
    """The structure reference for scoring: the real image, or the generated guidance."""
    if req.is_real:
        return np.asarray(req.guidance_image)
    return run.reconstruction.numpy()


def pnp_method(backbone, overrides: dict | None = None, cache: GuidanceCache | None = None, seed: int = 0):
    def method(pair: BenchmarkPair):
        req = request_for_pair(pair, backbone, overrides, seed)
        run = cache.get(req) if cache is not None else None
        result = translate(req, backbone, guidance=run)
        return guidance_image(pair, req, result.guidance), result.image.numpy()
    return method


def _generated_guidance(pair: BenchmarkPair, backbone, cache: GuidanceCache | None):
    req = request_for_pair(pair, backbone)
    if cache is not None:
        return cache.get(req).reconstruction.numpy()
    x = seeded_noise(backbone.input_shape, pair.seed)
    return sample(x, pair.source_prompt, backbone, req.n_steps, clip=SAMPLE_CLIP).numpy()


def sdedit_method(backbone, noise_fraction: float, n_steps: int = 50, guidance_scale: float = 7.5,
                  seed: int = 0, cache: GuidanceCache | None = None):
    def method(pair: BenchmarkPair):
        if pair.is_generated:
            g = _generated_guidance(pair, backbone, cache)
        else:
            g = _load(pair.image, backbone.input_shape[-1])
        out = sdedit(g, pair.target_prompt, noise_fraction, backbone, n_steps, guidance_scale, seed)
        return np.asarray(g), out.numpy()
    return method


def identity_method(backbone, cache: GuidanceCache | None = None):
    def method(pair: BenchmarkPair):
        g = _generated_guidance(pair, backbone, cache) if pair.is_generated else _load(pair.image, backbone.input_shape[-1])
        return np.asarray(g), np.asarray(g)
    return method
