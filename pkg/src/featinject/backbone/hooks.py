from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import torch

STAGES = ("encoder", "decoder")
KINDS = ("resblock_features", "attention_queries", "attention_keys", "attention_matrix")


@dataclass(frozen=True, order=True)
class HookSiteId:
    """A named location inside the denoiser, e.g. ``decoder.4.resblock_features``."""

    stage: str
    layer_index: int
    kind: str

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown site kind {self.kind!r}")
        if int(self.layer_index) < 1:
            raise ValueError("layer_index must be >= 1")

    def __str__(self) -> str:
        return f"{self.stage}.{self.layer_index}.{self.kind}"

    @classmethod
    def parse(cls, text: str) -> "HookSiteId":
        try:
            stage, layer, kind = text.strip().split(".")
            return cls(stage, int(layer), kind)
        except ValueError as e:
            raise ValueError(f"bad hook site {text!r}: {e}") from None


def features(stage: str, layer: int) -> HookSiteId:
    return HookSiteId(stage, layer, "resblock_features")


def attention(stage: str, layer: int) -> HookSiteId:
    return HookSiteId(stage, layer, "attention_matrix")


@dataclass
class HookContext:
    """Per-call record/override state for one ``denoise`` invocation.

    ``overrides`` maps a site to a single-sample value (no batch axis); it is
    broadcast over the batch and replaces the produced value before any
    downstream use. Sites in ``record`` get the value actually used, batch axis
    included, stored in ``recorded``. ``watch`` sees every attention matrix the
    network computes (self and cross), keyed by a descriptive name.
    """

    record: frozenset = frozenset()
    overrides: Mapping[HookSiteId, torch.Tensor] = field(default_factory=dict)
    watch: Callable[[str, torch.Tensor], None] | None = None
    recorded: dict = field(default_factory=dict)

    def __post_init__(self):
        self.record = frozenset(self.record)

    @property
    def sites(self) -> set[HookSiteId]:
        return set(self.record) | set(self.overrides)

    def override_for(self, site: HookSiteId, like: torch.Tensor) -> torch.Tensor | None:
        value = self.overrides.get(site)
        if value is None:
            return None
        value = torch.as_tensor(value, dtype=like.dtype)
        if tuple(value.shape) != tuple(like.shape[1:]):
            raise ValueError(
                f"override for {site} has shape {tuple(value.shape)}, "
                f"site produces {tuple(like.shape[1:])}"
            )
        return value.unsqueeze(0).expand_as(like)

    def visit(self, site: HookSiteId, value: torch.Tensor) -> torch.Tensor:
        replacement = self.override_for(site, value)
        if replacement is not None:
            value = replacement
        if site in self.record:
            self.recorded[site] = value.detach().clone()
        return value

    def observe(self, name: str, matrix: torch.Tensor) -> None:
        if self.watch is not None:
            self.watch(name, matrix)
