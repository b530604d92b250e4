"""Ablation table and SDEdit sweep on the shipped 20-pair toy benchmark."""

import argparse
import time
from pathlib import Path

from featinject.bench import (
    GuidanceCache, ToyStructureDistance, ToyTextFidelity, evaluate, load_wild_manifest, run_ablation,
    sdedit_method, write_ablation_table,
)
from featinject.data import data_path
from featinject.toymodel import load_toy_backbone

FRACTIONS = (0.3, 0.6, 0.85)

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="artifacts")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    t0 = time.time()
    backbone = load_toy_backbone()
    pairs = load_wild_manifest(data_path("toy_wild.tsv"))

    reports, metric_ids = run_ablation(pairs, backbone, workers=args.workers)
    print(write_ablation_table(reports, out / "ablation.tsv", metric_ids).read_text(), end="")

    cache = GuidanceCache(backbone, [])
    metrics = [ToyStructureDistance(), ToyTextFidelity()]
    lines = ["fraction\ttoy-structure\ttoy-text"]
    for f in FRACTIONS:
        agg = evaluate(pairs, sdedit_method(backbone, f, cache=cache), metrics, args.workers).aggregates
        lines.append(f"{f}\t{agg['toy-structure']:.6g}\t{agg['toy-text']:.6g}")
    (out / "sdedit.tsv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"{time.time() - t0:.0f}s")
