"""Benchmark pairs: ImageNet-R-TI2I construction rules, generated variant, manifests."""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, replace
from pathlib import Path

SPLITS = ("wild-real", "wild-generated", "imagenet-r", "generated-imagenet-r")
WILD_SPLITS = ("wild-real", "wild-generated")

RENDITIONS = (
    "an art", "a cartoon", "a graphic", "a deviantart", "a painting", "a sketch",
    "a graffiti", "an embroidery", "an origami", "a pattern", "a sculpture",
    "a tattoo", "a toy", "a video-game", "a photo", "an image",
)
IMAGENET_R_CLASSES = (
    "castle", "cat", "goldfish", "hummingbird", "husky",
    "jeep", "panda", "penguin", "pizza", "violin",
)
PROMPTS_PER_IMAGE = 5
SWAPS_PER_IMAGE = 2
IMAGES_PER_CLASS = 3

_TEMPLATE = re.compile(r"^(an? [a-z-]+) of a (.+)$")


class ManifestError(ValueError):
    pass


def template_prompt(rendition: str, cls: str) -> str:
    return f"{rendition} of a {cls}"


def parse_template(prompt: str) -> tuple[str, str]:
    m = _TEMPLATE.match(prompt)
    if not m or m.group(1) not in RENDITIONS:
        raise ValueError(f"prompt {prompt!r} does not follow '<rendition> of a <class>'")
    return m.group(1), m.group(2)


@dataclass(frozen=True)
class BenchmarkPair:
    split: str
    target_prompt: str
    class_label: str
    rendition: str
    image: str | None = None  # path of a real guidance image
    seed: int | None = None  # generated guidance: seed + source prompt
    source_prompt: str | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}; expected one of {SPLITS}")
        if (self.image is None) == (self.seed is None):
            raise ValueError("a pair references either a guidance image or a generation seed")
        if self.seed is not None and not self.source_prompt:
            raise ValueError("generated pairs need a source prompt")
        if self.split in ("imagenet-r", "generated-imagenet-r"):
            rendition, _ = parse_template(self.target_prompt)
            if rendition != self.rendition:
                raise ValueError(f"rendition {self.rendition!r} disagrees with prompt {self.target_prompt!r}")

    @property
    def is_generated(self) -> bool:
        return self.seed is not None

    @property
    def target_class(self) -> str:
        if self.split in ("imagenet-r", "generated-imagenet-r"):
            return parse_template(self.target_prompt)[1]
        return self.class_label


def read_table(path) -> list[tuple[int, list[str]]]:
    """Tab-separated rows with their 1-based line numbers; blank and '#' lines skipped."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if line.strip() and not line.lstrip().startswith("#"):
            out.append((lineno, line.rstrip("\n").split("\t")))
    return out


def load_class_manifest(path) -> dict[str, list[str]]:
    """``class<TAB>image path`` lines; paths are resolved relative to the manifest."""
    base = Path(path).parent
    classes: dict[str, list[str]] = {}
    for lineno, fields in read_table(path):
        if len(fields) != 2:
            raise ManifestError(f"{path}:{lineno}: expected 2 fields, got {len(fields)}")
        classes.setdefault(fields[0], []).append(str(base / fields[1]))
    return classes


def load_related_classes(path) -> dict[str, list[str]]:
    """``class<TAB>related1,related2,...`` lines."""
    out = {}
    for lineno, fields in read_table(path):
        if len(fields) != 2:
            raise ManifestError(f"{path}:{lineno}: expected 2 fields, got {len(fields)}")
        out[fields[0]] = [c.strip() for c in fields[1].split(",") if c.strip()]
    return out


def build_imagenet_r_ti2i(class_manifest: dict[str, list[str]], related_classes: dict[str, list[str]],
                          seed: int = 0) -> list[BenchmarkPair]:
    """Five target prompts for each of the 30 guidance images.

    Renditions are drawn uniformly without replacement per image; two of the five
    prompts (chosen uniformly) replace the class by one of its related classes.
    """
    if len(class_manifest) != 10:
        raise ManifestError(f"expected 10 classes, got {len(class_manifest)}")
    for cls, images in class_manifest.items():
        if len(images) != IMAGES_PER_CLASS:
            raise ManifestError(f"class {cls!r} has {len(images)} images, expected {IMAGES_PER_CLASS}")
        related = related_classes.get(cls)
        if related is None or len(related) != 5:
            raise ManifestError(f"class {cls!r} needs exactly 5 related classes")
        if cls in related:
            raise ManifestError(f"class {cls!r} lists itself as related")
    rng = random.Random(seed)
    pairs = []
    for cls in sorted(class_manifest):
        for image in class_manifest[cls]:
            renditions = rng.sample(RENDITIONS, PROMPTS_PER_IMAGE)
            swapped = set(rng.sample(range(PROMPTS_PER_IMAGE), SWAPS_PER_IMAGE))
            for j, rendition in enumerate(renditions):
                target = rng.choice(related_classes[cls]) if j in swapped else cls
                pairs.append(BenchmarkPair(
                    split="imagenet-r",
                    target_prompt=template_prompt(rendition, target),
                    class_label=cls,
                    rendition=rendition,
                    image=image,
                ))
    return pairs


def build_generated_variant(pairs: list[BenchmarkPair], seed: int = 0) -> list[BenchmarkPair]:
    """Swap every image reference for a generation spec with the true class.

    All prompts of one guidance image share its seed and source rendition.
    """
    rng = random.Random(seed)
    per_image: dict[str, tuple[int, str]] = {}
    out = []
    for p in pairs:
        key = p.image if p.image is not None else f"seed:{p.seed}"
        if key not in per_image:
            rendition = rng.choice(RENDITIONS)
            per_image[key] = (rng.randrange(2**31), template_prompt(rendition, p.class_label))
        s, source = per_image[key]
        out.append(replace(p, split="generated-imagenet-r", image=None, seed=s, source_prompt=source))
    return out


def parse_pair(fields: list[str], base: Path | None = None) -> BenchmarkPair:
    if len(fields) != 6:
        raise ValueError(f"expected 6 tab-separated fields, got {len(fields)}")
    split, ref, source, target, cls, rendition = fields
    if split not in SPLITS:
        raise ValueError(f"unknown split tag {split!r}")
    image = seed = None
    if ref.lstrip("-").isdigit():
        seed = int(ref)
    else:
        image = str(base / ref) if base is not None and not Path(ref).is_absolute() else ref
    return BenchmarkPair(split, target, cls, rendition, image=image, seed=seed, source_prompt=source or None)


def load_manifest(path, allowed_splits=SPLITS) -> list[BenchmarkPair]:
    """Parse a pair manifest (split, image-or-seed, source, target, class, rendition).

    Relative image paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest {path} does not exist")
    pairs = []
    for lineno, fields in read_table(path):
        try:
            pair = parse_pair(fields, path.parent)
        except ValueError as e:
            raise ManifestError(f"{path}:{lineno}: {e}") from None
        if pair.split not in allowed_splits:
            raise ManifestError(f"{path}:{lineno}: split {pair.split!r} not allowed here")
        pairs.append(pair)
    return pairs


def load_wild_manifest(path) -> list[BenchmarkPair]:
    return load_manifest(path, WILD_SPLITS)


def format_pair(p: BenchmarkPair, base: Path | None = None) -> str:
    ref = str(p.seed) if p.seed is not None else p.image
    if base is not None and p.image is not None:
        try:
            ref = str(Path(p.image).relative_to(base))
        except ValueError:
            pass
    return "\t".join([p.split, ref, p.source_prompt or "", p.target_prompt, p.class_label, p.rendition])


def write_manifest(pairs: list[BenchmarkPair], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = "# split\timage-or-seed\tsource\ttarget\tclass\trendition\n"
    path.write_text(header + "".join(format_pair(p, path.parent) + "\n" for p in pairs))
    return path
