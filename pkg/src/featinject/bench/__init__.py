"""Benchmark construction, metric providers and the evaluation harness."""

from .ablation import VARIANTS, run_ablation, union_sites
from .evaluate import ABLATION_ROWS, MetricReport, PairScore, aggregate, evaluate, write_ablation_table
from .methods import (
    TOY_REAL_OVERRIDES, GuidanceCache, identity_method, pnp_method, request_for_pair, sdedit_method,
)
from .metrics import (
    TOY_METRICS, ExternalAdapter, MetricUnavailableError, PatchDeviation, PatchProjector,
    ToyStructureDistance, ToyTextFidelity, clip_adapter, dino_adapter, get_provider, lpips_adapter,
    self_similarity, toy_metrics,
)
from .pairs import (
    IMAGENET_R_CLASSES, RENDITIONS, SPLITS, WILD_SPLITS, BenchmarkPair, ManifestError,
    build_generated_variant, build_imagenet_r_ti2i, load_class_manifest, load_manifest,
    load_related_classes, load_wild_manifest, parse_template, template_prompt, write_manifest,
)
