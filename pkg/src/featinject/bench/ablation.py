"""The preset matrix behind the ablation table, sharing one guidance run per pair."""

from __future__ import annotations

from ..pipeline import apply_overrides, preset
from .evaluate import ABLATION_ROWS, MetricReport, evaluate
from .methods import GuidanceCache, pnp_method, request_for_pair
from .metrics import TOY_METRICS, get_provider

VARIANTS = {key: ({} if key == "full" else preset(key)) for key, _ in ABLATION_ROWS}


def union_sites(pairs, backbone, variants=VARIANTS, base_overrides=None) -> list:
    sites = set()
    for pair in {p.split: p for p in pairs}.values():  # one pair per split is enough
        base = request_for_pair(pair, backbone)
        for overrides in variants.values():
            req = apply_overrides(base, {**(base_overrides or {}), **overrides})
            sites.update(req.injection.resolve(backbone).all_sites())
    return sorted(sites)


def run_ablation(pairs, backbone, metric_ids=TOY_METRICS, workers: int = 1, seed: int = 0,
                 variants=VARIANTS, base_overrides=None) -> tuple[dict[str, MetricReport], list[str]]:
    """Evaluate every variant; ``base_overrides`` apply to all of them, before the variant's own keys."""
    cache = GuidanceCache(backbone, union_sites(pairs, backbone, variants, base_overrides))
    reports = {}
    for key, overrides in variants.items():
        method = pnp_method(backbone, {**(base_overrides or {}), **overrides}, cache, seed)
        reports[key] = evaluate(pairs, method, [get_provider(m) for m in metric_ids], workers)
    return reports, list(metric_ids)
