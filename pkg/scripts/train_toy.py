"""Train the shared toy checkpoint (artifacts/toy_shapes.ckpt by default)."""

import argparse
import logging
import time

from featinject.backbone import load_checkpoint
from featinject.toymodel import TRAIN_SEED, TRAIN_STEPS, default_checkpoint_path, ensure_toy_checkpoint

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=None)
    ap.add_argument("--steps", type=int, default=TRAIN_STEPS)
    ap.add_argument("--seed", type=int, default=TRAIN_SEED)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    t0 = time.time()
    path = ensure_toy_checkpoint(args.out or default_checkpoint_path(), steps=args.steps, seed=args.seed)
    meta = load_checkpoint(path).meta
    print(path, meta, f"{time.time() - t0:.0f}s")
