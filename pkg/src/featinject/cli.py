"""``featinject`` command line: training, translation, analysis and benchmarks."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, check_keys, load_config, parse_overrides, request_from_config, request_to_config
from .imageio import load_image, save_image, save_unit_image

log = logging.getLogger("featinject")

DEFAULT_VARIANCE_PROMPTS = (
    "a red circle", "a blue square", "a green triangle", "a yellow ring", "a purple cross",
    "a orange circle", "a white square", "a cyan triangle", "a red ring", "a blue cross",
)


@dataclass
class RunConfig:
    command: str
    config: Path | None = None
    overrides: dict[str, str] = field(default_factory=dict)
    out: Path = Path("out")
    seed: int = 0
    verbosity: int = 0

    def values(self) -> dict[str, str]:
        """Config-file values with ``--set`` overrides applied on top."""
        values = load_config(self.config) if self.config else {}
        values.update(self.overrides)
        return values


def _run_config(args) -> RunConfig:
    return RunConfig(args.command, args.config, parse_overrides(args.set), Path(args.out), args.seed, args.verbose)


def _backbone(args):
    from .toymodel import default_checkpoint_path, load_toy_backbone
    from .backbone import ToyBackbone, load_checkpoint

    path = Path(args.checkpoint) if args.checkpoint else default_checkpoint_path()
    if args.checkpoint:
        if not path.exists():
            raise FileNotFoundError(f"--checkpoint: {path} does not exist")
        return ToyBackbone(load_checkpoint(path))
    return load_toy_backbone(path)


def _need(args, flag: str):
    value = getattr(args, flag.lstrip("-").replace("-", "_"))
    if value is None:
        raise ConfigError(f"missing required flag {flag}")
    return value


def _written(paths) -> int:
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        log.error("artifacts not written: %s", missing)
        return 1
    for p in paths:
        print(p)
    return 0


# --- commands ---------------------------------------------------------------

def _load_dataset(spec: str):
    from .backbone import ToyDataset, make_toy_dataset

    if spec.startswith("synthetic:"):
        parts = spec.split(":")
        n = int(parts[1])
        seed = int(parts[2]) if len(parts) > 2 else 1
        return make_toy_dataset(n, seed=seed)
    root = Path(spec)
    if not root.is_dir() or not (root / "captions.tsv").exists():
        raise ConfigError(f"--dataset: {root} is not a directory with captions.tsv")
    images, captions = [], []
    for line in (root / "captions.tsv").read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            name, caption = line.split("\t")
            images.append(load_image(root / name))
            captions.append(caption)
    return ToyDataset(np.stack(images).astype(np.float32), captions)


def cmd_train_toy(args) -> int:
    from .backbone import TrainConfig, save_checkpoint, train_toy

    rc = _run_config(args)
    dataset_spec = _need(args, "--dataset")
    known = {f"train.{f.name}": f for f in fields(TrainConfig)}
    values = rc.values()
    check_keys(values, known)
    cfg = TrainConfig()
    for key, value in values.items():
        name = known[key].name
        cfg = replace(cfg, **{name: type(getattr(cfg, name))(value)})
    data = _load_dataset(dataset_spec)
    rc.out.mkdir(parents=True, exist_ok=True)
    log_path = rc.out / "train_log.txt"
    handler = logging.FileHandler(log_path, mode="w")
    handler.setFormatter(logging.Formatter("%(message)s"))
    logging.getLogger("featinject").addHandler(handler)
    logging.getLogger("featinject").setLevel(logging.INFO)
    try:
        ckpt = train_toy(data, steps=args.steps if args.steps is not None else cfg.steps, seed=rc.seed, config=cfg)
        for k, v in ckpt.meta.items():
            log.info("%s=%s", k, v)
    finally:
        logging.getLogger("featinject").removeHandler(handler)
        handler.close()
    path = save_checkpoint(ckpt, rc.out / "toy.ckpt")
    return _written([path, log_path])


def _translation_request(args, rc: RunConfig, backbone):
    from .pipeline import apply_overrides

    values = rc.values()
    if args.preset:
        values["preset"] = args.preset
    values.setdefault("seed", str(rc.seed))
    base_dir = rc.config.parent if rc.config else None
    req = request_from_config(values, base_dir, backbone.input_shape[-1])
    if args.steps is not None:
        # keep the thresholds at the same fraction of the run unless set explicitly
        n = args.steps
        scaled = {"injection.n_steps": n}
        for key in ("tau_f", "tau_A"):
            if f"injection.{key}" not in values:
                scaled[f"injection.{key}"] = int(round(getattr(req.injection, key) * n / req.n_steps))
        req = apply_overrides(req, scaled)
    if args.no_negative_prompt:
        req = apply_overrides(req, {"neg_schedule.kind": "constant", "neg_schedule.alpha0": 1.0})
    return req, values


def cmd_translate(args) -> int:
    from .pipeline import translate

    rc = _run_config(args)
    backbone = _backbone(args)
    req, values = _translation_request(args, rc, backbone)
    result = translate(req, backbone)
    rc.out.mkdir(parents=True, exist_ok=True)
    image_ref = values.get("guidance.image")
    if image_ref and rc.config and not Path(image_ref).is_absolute():
        image_ref = str((rc.config.parent / image_ref).resolve())
    (rc.out / "run.cfg").write_text(request_to_config(req, image_ref))
    paths = [
        save_image(rc.out / "translated.png", result.image),
        save_image(rc.out / "guidance.png", result.guidance.reconstruction),
        result.write_log(rc.out / "steps.log"),
        rc.out / "run.cfg",
    ]
    return _written(paths)


def cmd_invert(args) -> int:
    from .pipeline import invert, sample

    rc = _run_config(args)
    backbone = _backbone(args)
    image = load_image(_need(args, "--image"), backbone.input_shape[-1])
    steps = args.steps or 50
    x_T, _ = invert(image, backbone, steps)
    recon = sample(x_T, "", backbone, steps)
    rc.out.mkdir(parents=True, exist_ok=True)
    np.save(rc.out / "x_T.npy", x_T.numpy())
    err = float(np.abs((recon.numpy() - image) / 2).max())
    (rc.out / "invert.txt").write_text(f"steps={steps}\nmax_abs_error_unit={err:.6g}\n")
    return _written([rc.out / "x_T.npy", save_image(rc.out / "reconstruction.png", recon), rc.out / "invert.txt"])


def cmd_sdedit(args) -> int:
    from .pipeline import sdedit

    rc = _run_config(args)
    backbone = _backbone(args)
    image = load_image(_need(args, "--image"), backbone.input_shape[-1])
    out = sdedit(image, _need(args, "--prompt"), args.fraction, backbone, args.steps or 50,
                 args.guidance_scale, rc.seed)
    return _written([save_image(rc.out / f"sdedit_{args.fraction:g}.png", out)])


def _analysis_items(args):
    from .pipeline import GenerationSpec

    items = []
    for path in args.images or ():
        items.append(load_image(path, 64))
    for spec in args.generate or ():
        prompt, _, seed = spec.rpartition(":")
        items.append(GenerationSpec(prompt, int(seed)))
    if not items:
        raise ConfigError("give --images and/or --generate PROMPT:SEED")
    return items


def cmd_pca(args) -> int:
    from .analysis import collect, mid_timestep, pca, render_rgb
    from .backbone.hooks import HookSiteId
    from .diffmath import make_plan

    rc = _run_config(args)
    backbone = _backbone(args)
    steps = args.steps or 50
    t = args.t if args.t is not None else mid_timestep(make_plan(backbone.schedule, steps))
    items = _analysis_items(args)
    m = collect(items, HookSiteId.parse(args.site), t, backbone, steps)
    p = pca(m, args.k)
    paths = [save_unit_image(rc.out / f"pca_{i:02d}.png", render_rgb(p, i, m.spatial_shape))
             for i in range(len(items))]
    rc.out.mkdir(parents=True, exist_ok=True)
    summary = rc.out / "pca.tsv"
    summary.write_text("component\texplained\n" + "".join(f"{i + 1}\t{e:.6f}\n" for i, e in enumerate(p.explained)))
    return _written(paths + [summary])


def cmd_attention_pca(args) -> int:
    from .analysis import attention_pca, mid_timestep
    from .diffmath import make_plan

    rc = _run_config(args)
    backbone = _backbone(args)
    steps = args.steps or 50
    t = args.t if args.t is not None else mid_timestep(make_plan(backbone.schedule, steps))
    layers = ([int(x) for x in args.layers.split(",")] if args.layers
              else backbone.layers("decoder", "attention_matrix"))
    image = _analysis_items(args)[0]
    results = attention_pca(image, layers, t, backbone, steps)
    paths = [save_unit_image(rc.out / f"attention_pca_decoder{l}.png", r[1]) for l, r in results.items()]
    return _written(paths)


def cmd_variance(args) -> int:
    from .analysis import variance_study

    rc = _run_config(args)
    backbone = _backbone(args)
    prompts = args.prompts.split(";") if args.prompts else list(DEFAULT_VARIANCE_PROMPTS)
    seeds = [rc.seed + i for i in range(args.n_seeds)]
    report = variance_study(seeds, prompts, backbone)
    return _written([report.write_tsv(rc.out / "variance.tsv")])


def cmd_bench_build(args) -> int:
    from .bench import (
        build_generated_variant, build_imagenet_r_ti2i, load_class_manifest, load_related_classes,
        write_manifest,
    )
    from .data import data_path

    rc = _run_config(args)
    classes = load_class_manifest(args.classes or data_path("imagenet_r_classes.tsv"))
    related = load_related_classes(args.related or data_path("related_classes.tsv"))
    pairs = build_imagenet_r_ti2i(classes, related, seed=rc.seed)
    if args.mode == "generated":
        pairs = build_generated_variant(pairs, seed=rc.seed)
    return _written([write_manifest(pairs, rc.out / f"{args.mode}_pairs.tsv")])


def _pairs(args):
    from .bench import load_manifest
    from .data import data_path

    pairs = load_manifest(args.manifest or data_path("toy_wild.tsv"))
    return pairs[: args.limit] if args.limit else pairs


def _typed_overrides(raw: dict[str, str]) -> dict:
    from .config import REQUEST_FIELDS

    check_keys(raw, REQUEST_FIELDS)
    return {k: REQUEST_FIELDS[k](v) for k, v in raw.items()}


def cmd_bench_eval(args) -> int:
    from .bench import evaluate, get_provider, identity_method, pnp_method, sdedit_method
    from .pipeline import preset

    rc = _run_config(args)
    backbone = _backbone(args)
    metrics = [get_provider(m) for m in args.metrics.split(",")]
    if args.method == "pnp":
        overrides = preset(args.preset) if args.preset else {}
        overrides.update(_typed_overrides(rc.overrides))
        method = pnp_method(backbone, overrides, seed=rc.seed)
    elif args.method == "sdedit":
        method = sdedit_method(backbone, args.fraction, args.steps or 50, seed=rc.seed)
    else:
        method = identity_method(backbone)
    report = evaluate(_pairs(args), method, metrics, workers=args.workers)
    rc.out.mkdir(parents=True, exist_ok=True)
    (rc.out / "summary.txt").write_text(report.summary() + "\n")
    print(report.summary())
    return _written([report.write_tsv(rc.out / "report.tsv"), rc.out / "summary.txt"])


def cmd_ablate(args) -> int:
    from .bench import run_ablation, write_ablation_table

    rc = _run_config(args)
    backbone = _backbone(args)
    reports, metric_ids = run_ablation(_pairs(args), backbone, workers=args.workers, seed=rc.seed,
                                       base_overrides=_typed_overrides(rc.overrides))
    path = write_ablation_table(reports, rc.out / "ablation.tsv", metric_ids)
    print(path.read_text(), end="")
    return _written([path])


COMMANDS = {
    "train-toy": cmd_train_toy,
    "translate": cmd_translate,
    "invert": cmd_invert,
    "sdedit": cmd_sdedit,
    "pca": cmd_pca,
    "attention-pca": cmd_attention_pca,
    "variance": cmd_variance,
    "bench-build": cmd_bench_build,
    "bench-eval": cmd_bench_eval,
    "ablate": cmd_ablate,
}

HELP = {
    "train-toy": "train a toy checkpoint on a synthetic or captioned dataset",
    "translate": "translate a guidance image (or generation spec) to a target prompt",
    "invert": "DDIM-invert an image and report the reconstruction error",
    "sdedit": "noise an image part-way and denoise it towards a prompt",
    "pca": "PCA of recorded features across images, rendered as RGB",
    "attention-pca": "PCA of self-attention matrices per decoder layer",
    "variance": "encoder-feature variance across seeds and prompts at t=T",
    "bench-build": "build the ImageNet-R pair manifest (or its generated variant)",
    "bench-eval": "score a method on a pair manifest",
    "ablate": "ablation table over the injection variants",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key=value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--preset", default=None)
    common.add_argument("--checkpoint", default=None, help="toy checkpoint (default: shared artifact)")
    common.add_argument("--steps", type=int, default=None)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="featinject", description=__doc__)
    sub = ap.add_subparsers(dest="command", metavar="command")
    p = {name: sub.add_parser(name, parents=[common], help=HELP[name]) for name in COMMANDS}

    p["train-toy"].add_argument("--dataset", help="synthetic:N[:SEED] or a directory with captions.tsv")
    p["translate"].add_argument("--no-negative-prompt", action="store_true")
    p["invert"].add_argument("--image")
    p["sdedit"].add_argument("--image")
    p["sdedit"].add_argument("--prompt")
    p["sdedit"].add_argument("--fraction", type=float, default=0.6)
    p["sdedit"].add_argument("--guidance-scale", type=float, default=7.5)
    for name in ("pca", "attention-pca"):
        p[name].add_argument("--images", nargs="*")
        p[name].add_argument("--generate", nargs="*", metavar="PROMPT:SEED")
        p[name].add_argument("--t", type=int, default=None, help="timestep (default: mid-plan)")
    p["pca"].add_argument("--site", default="decoder.4.resblock_features")
    p["pca"].add_argument("-k", type=int, default=3)
    p["attention-pca"].add_argument("--layers", default=None, help="comma-separated decoder layers")
    p["variance"].add_argument("--n-seeds", type=int, default=10)
    p["variance"].add_argument("--prompts", default=None, help="';'-separated prompts")
    p["bench-build"].add_argument("--mode", choices=("imagenet-r", "generated"), default="imagenet-r")
    p["bench-build"].add_argument("--classes", default=None, help="class<TAB>image manifest")
    p["bench-build"].add_argument("--related", default=None, help="class<TAB>related,... lists")
    for name in ("bench-eval", "ablate"):
        p[name].add_argument("--manifest", default=None, help="pair manifest (default: shipped toy wild)")
        p[name].add_argument("--limit", type=int, default=None)
    p["bench-eval"].add_argument("--method", choices=("pnp", "sdedit", "identity"), default="pnp")
    p["bench-eval"].add_argument("--fraction", type=float, default=0.6)
    p["bench-eval"].add_argument("--metrics", default="toy-structure,toy-text,patch-lpips")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command is None:
        ap.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, KeyError, FileNotFoundError) as e:
        print(f"featinject {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
