"""Cross-image PCA of recorded activations and the seed-vs-prompt variance study."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .backbone.hooks import HookContext, HookSiteId, attention, features
from .backbone.prompts import encode_prompt
from .diffmath import ddim_step, make_plan
from .pipeline import SAMPLE_CLIP, GenerationSpec, invert, seeded_noise

DEGENERATE_TOL = 1e-12


@dataclass
class FeatureMatrix:
    rows: np.ndarray  # (n_rows, channels)
    image_ids: np.ndarray  # (n_rows,)
    coords: np.ndarray  # (n_rows, 2) as (y, x)
    site: HookSiteId
    t: int
    spatial_shape: tuple[int, int]


@dataclass
class PcaResult:
    mean: np.ndarray
    components: np.ndarray  # (k, channels), orthonormal rows
    explained: np.ndarray  # (k,) fraction of total variance
    projections: np.ndarray  # (n_rows, k)
    image_ids: np.ndarray
    degenerate: bool = False

    @property
    def k(self) -> int:
        return self.components.shape[0]


def site_rows(value: torch.Tensor, site: HookSiteId) -> tuple[np.ndarray, tuple[int, int]]:
    """Flatten one recorded site value into one row per spatial location."""
    v = np.asarray(value, dtype=np.float64)
    if site.kind == "resblock_features":
        c, h, w = v.shape
        return v.reshape(c, h * w).T, (h, w)
    n = v.shape[1]
    side = int(round(np.sqrt(n)))
    if site.kind == "attention_matrix":
        return v.mean(axis=0), (side, side)  # heads averaged; one query row per location
    return v.transpose(1, 0, 2).reshape(n, -1), (side, side)


def mid_timestep(plan) -> int:
    """Plan timestep closest to half-way through sampling (toy analogue of t=540)."""
    ts = np.array(plan.eval_timesteps)
    return int(ts[np.argmin(np.abs(ts - ts[0] / 2))])


def _record_at(item, sites, t, backbone, n_steps) -> dict[HookSiteId, torch.Tensor]:
    s = backbone.schedule
    plan = make_plan(s, n_steps)
    if t not in plan.eval_timesteps:
        raise ValueError(f"timestep {t} is not visited by the {n_steps}-step plan")
    backbone.check_sites(sites)
    empty = encode_prompt("")
    if isinstance(item, GenerationSpec):
        emb = encode_prompt(item.prompt)
        x = seeded_noise(backbone.input_shape, item.seed)
        for _, tt, t_prev in plan.steps():
            if tt == t:
                break
            x = ddim_step(x, backbone.denoise(x, emb, tt), tt, t_prev, s, SAMPLE_CLIP)
    else:
        emb = empty
        _, traj = invert(item, backbone, n_steps)
        x = traj[plan.timesteps[::-1].index(t)]
    hooks = HookContext(record=sites)
    backbone.denoise(x, emb, t, hooks)
    return {site: hooks.recorded[site][0] for site in sites}


def collect(images, site: HookSiteId, t: int, backbone, n_steps: int = 50) -> FeatureMatrix:
    """Record ``site`` at timestep ``t`` for every image and stack the spatial rows.

    Real images (arrays) are DDIM-inverted first and the recording is taken at
    their inverted latent for ``t``; :class:`GenerationSpec` items are sampled
    from their seed down to ``t``.
    """
    rows, ids, coords = [], [], []
    shape = None
    for i, item in enumerate(images):
        value = _record_at(item, [site], t, backbone, n_steps)[site]
        r, shape = site_rows(value, site)
        rows.append(r)
        ids.append(np.full(len(r), i))
        yy, xx = np.divmod(np.arange(len(r)), shape[1])
        coords.append(np.stack([yy, xx], axis=1))
    return FeatureMatrix(np.concatenate(rows), np.concatenate(ids), np.concatenate(coords), site, t, shape)


def pca(m: FeatureMatrix | np.ndarray, k: int) -> PcaResult:
    """Mean-centred PCA by eigendecomposition of the covariance, no whitening.

    Components are sorted by decreasing eigenvalue; each is signed so its
    largest-magnitude entry is positive. All-equal rows set ``degenerate``.
    """
    X = np.asarray(m.rows if isinstance(m, FeatureMatrix) else m, dtype=np.float64)
    ids = m.image_ids if isinstance(m, FeatureMatrix) else np.zeros(len(X), dtype=int)
    n, c = X.shape
    if not 1 <= k <= min(n, c):
        raise ValueError(f"k={k} outside [1, min(rows, cols)={min(n, c)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(n - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T[:k].copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    total = evals.sum()
    degenerate = total <= DEGENERATE_TOL * max(1.0, float(np.abs(X).max()) ** 2)
    explained = np.zeros(k) if degenerate else evals[:k] / total
    return PcaResult(mean, comps, explained, Xc @ comps.T, ids, bool(degenerate))


def render_rgb(p: PcaResult, image_id: int, spatial_shape: tuple[int, int]) -> np.ndarray:
    """Map the first three projections of one image to RGB in [0, 1].

    Normalisation bounds are shared over the whole collection so colours are
    comparable across images; a constant component renders as 0.5.
    """
    if p.k < 3:
        raise ValueError("render_rgb needs at least 3 components")
    proj = p.projections[:, :3]
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    span = hi - lo
    flat = np.where(span > 0, (proj - lo) / np.where(span > 0, span, 1.0), 0.5)
    rows = flat[p.image_ids == image_id]
    h, w = spatial_shape
    if len(rows) != h * w:
        raise ValueError(f"image {image_id} has {len(rows)} rows, expected {h * w}")
    return rows.reshape(h, w, 3)


def attention_matrix_pca(A, k: int = 3) -> tuple[PcaResult, np.ndarray]:
    """PCA over the query rows of one attention map (heads averaged) and its rendering."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 3:
        A = A.mean(axis=0)
    side = int(round(np.sqrt(A.shape[0])))
    result = pca(A, k)
    return result, render_rgb(result, 0, (side, side))


def attention_pca(image, layers, t: int, backbone, n_steps: int = 50, k: int = 3) -> dict:
    """Per decoder layer: ``(PcaResult, rendering)`` of its self-attention map at ``t``."""
    sites = [attention("decoder", l) for l in sorted(layers)]
    values = _record_at(image, sites, t, backbone, n_steps)
    return {site.layer_index: attention_matrix_pca(values[site], k) for site in sites}


@dataclass
class VarianceReport:
    layers: list[int]
    same_prompt: list[float]  # variance across seeds, prompt fixed
    same_seed: list[float]  # variance across prompts, seed fixed
    total: list[float]  # over the union of all runs
    n_seeds: int
    n_prompts: int

    @property
    def n_sets(self) -> int:
        return self.n_seeds + self.n_prompts

    def write_tsv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            out = csv.writer(fh, delimiter="\t", lineterminator="\n")
            out.writerow(["layer", "same_prompt_variance", "same_seed_variance", "total_variance"])
            for row in zip(self.layers, self.same_prompt, self.same_seed, self.total):
                out.writerow([row[0]] + [f"{v:.8g}" for v in row[1:]])
        return path


def _set_variance(stack: np.ndarray) -> float:
    # population variance per channel and location, then averaged
    return float(stack.var(axis=0).mean())


def variance_study(seeds, prompts, backbone, layers=None) -> VarianceReport:
    """Encoder-feature variance at t=T for every (seed, prompt) combination.

    Sets of type (i) fix the prompt and vary the seed, sets of type (ii) fix the
    seed and vary the prompt; each curve is the mean of its sets' variances.
    """
    seeds, prompts = list(seeds), list(prompts)
    if len(seeds) < 2 or len(prompts) < 2:
        raise ValueError("variance_study needs at least 2 seeds and 2 prompts")
    layers = sorted(layers or backbone.layers("encoder", "resblock_features"))
    sites = [features("encoder", l) for l in layers]
    T = backbone.schedule.T
    feats = {l: np.empty((len(seeds), len(prompts)), dtype=object) for l in layers}
    embs = [encode_prompt(p) for p in prompts]
    for i, seed in enumerate(seeds):
        x = seeded_noise(backbone.input_shape, seed)
        for j, emb in enumerate(embs):
            hooks = HookContext(record=sites)
            backbone.denoise(x, emb, T, hooks)
            for l, site in zip(layers, sites):
                feats[l][i, j] = hooks.recorded[site][0].numpy().astype(np.float64)
    same_prompt, same_seed, total = [], [], []
    for l in layers:
        grid = np.stack([np.stack(list(row)) for row in feats[l]])  # (n_s, n_p, ...)
        same_prompt.append(float(np.mean([_set_variance(grid[:, j]) for j in range(len(prompts))])))
        same_seed.append(float(np.mean([_set_variance(grid[i]) for i in range(len(seeds))])))
        total.append(_set_variance(grid.reshape((-1,) + grid.shape[2:])))
    return VarianceReport(layers, same_prompt, same_seed, total, len(seeds), len(prompts))
