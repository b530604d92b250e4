"""Run a translation method over benchmark pairs and score the outputs."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .metrics import MetricUnavailableError
from .pairs import BenchmarkPair, format_pair

# method(pair) -> (guidance image, output image), both (3, H, W) in [-1, 1]
Method = Callable[[BenchmarkPair], tuple]


@dataclass
class PairScore:
    index: int
    pair: BenchmarkPair
    scores: dict[str, float]
    error: str | None = None


@dataclass
class MetricReport:
    per_pair: list[PairScore]
    aggregates: dict[str, float]
    directions: dict[str, str]

    @property
    def metric_ids(self) -> list[str]:
        return list(self.directions)

    @property
    def n_failed(self) -> int:
        return sum(s.error is not None for s in self.per_pair)

    def write_tsv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            out = csv.writer(fh, delimiter="\t", lineterminator="\n")
            out.writerow(["index", "split", "target_prompt"] + self.metric_ids + ["error"])
            for s in self.per_pair:
                vals = [f"{s.scores[m]:.8g}" if m in s.scores else "" for m in self.metric_ids]
                out.writerow([s.index, s.pair.split, s.pair.target_prompt] + vals + [s.error or ""])
        return path

    def summary(self) -> str:
        arrows = {"lower": "↓", "higher": "↑"}
        head = "  ".join(f"{m} {arrows[d]}" for m, d in self.directions.items())
        vals = "  ".join(f"{self.aggregates[m]:.4f}" for m in self.directions)
        return f"{head}\n{vals}\npairs={len(self.per_pair)} failed={self.n_failed}"


def _score_pair(i: int, pair: BenchmarkPair, method: Method, metrics) -> PairScore:
    try:
        guidance, output = method(pair)
        return PairScore(i, pair, {m.id: m.score(guidance, output, pair.target_prompt) for m in metrics})
    except Exception as e:  # one bad pair must not sink the run
        return PairScore(i, pair, {}, f"{type(e).__name__}: {e}")


def aggregate(per_pair: list[PairScore], metric_ids) -> dict[str, float]:
    out = {}
    for m in metric_ids:
        # sorted + fsum: exact sums, so aggregates ignore pair order
        vals = sorted(s.scores[m] for s in per_pair if m in s.scores)
        out[m] = math.fsum(vals) / len(vals) if vals else math.nan
    return out


def evaluate(pairs: list[BenchmarkPair], method: Method, metrics, workers: int = 1) -> MetricReport:
    metrics = list(metrics)
    missing = [m.id for m in metrics if not m.available]
    if missing:
        raise MetricUnavailableError(f"metric providers not available: {missing}")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            per_pair = list(pool.map(lambda a: _score_pair(a[0], a[1], method, metrics), enumerate(pairs)))
    else:
        per_pair = [_score_pair(i, p, method, metrics) for i, p in enumerate(pairs)]
    directions = {m.id: m.direction for m in metrics}
    return MetricReport(per_pair, aggregate(per_pair, directions), directions)


ABLATION_ROWS = (
    ("encoder_feat_7", "w/ encoder-feat-7"),
    ("wo_negprompt", "w/o neg. prompt"),
    ("wo_features", "w/o feat."),
    ("wo_selfattn", "w/o self-attn."),
    ("full", "Our method"),
)


def write_ablation_table(reports: dict[str, MetricReport], path, metric_ids) -> Path:
    """Rows in the order of :data:`ABLATION_ROWS`, one column per metric."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, delimiter="\t", lineterminator="\n")
        out.writerow(["variant"] + list(metric_ids))
        for key, label in ABLATION_ROWS:
            out.writerow([label] + [f"{reports[key].aggregates[m]:.6f}" for m in metric_ids])
    return path


__all__ = [
    "ABLATION_ROWS", "MetricReport", "PairScore", "aggregate", "evaluate",
    "format_pair", "write_ablation_table",
]
