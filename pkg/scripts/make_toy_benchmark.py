"""Regenerate the shipped toy Wild benchmark (guidance PNGs + manifest)."""

import argparse
from pathlib import Path

import numpy as np

from featinject.backbone.prompts import COLORS, SHAPES, caption
from featinject.backbone.shapes import random_spec, render
from featinject.bench.pairs import BenchmarkPair, write_manifest
from featinject.data import DATA_DIR
from featinject.imageio import save_image


def _target(rng, color, shape, change_shape):
    if change_shape:
        return caption(color, rng.choice([s for s in SHAPES if s != shape]))
    return caption(rng.choice([c for c in COLORS if c != color]), shape)


def build(out_dir: Path, n_real: int = 10, n_generated: int = 10, seed: int = 7):
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_real):
        spec = random_spec(rng)
        rel = f"toy_bench/real_{i:02d}.png"
        save_image(out_dir / rel, render(spec))
        target = _target(rng, spec.color, spec.shape, change_shape=i % 5 == 4)
        pairs.append(BenchmarkPair("wild-real", target, spec.shape, "toy",
                                   image=str(out_dir / rel), source_prompt=spec.caption))
    for i in range(n_generated):
        color, shape = rng.choice(list(COLORS)), rng.choice(list(SHAPES))
        target = _target(rng, color, shape, change_shape=i % 5 == 4)
        pairs.append(BenchmarkPair("wild-generated", target, shape, "toy",
                                   seed=1000 + i, source_prompt=caption(color, shape)))
    return write_manifest(pairs, out_dir / "toy_wild.tsv")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=DATA_DIR)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    print(build(args.out, seed=args.seed))
