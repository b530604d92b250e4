"""Feature banks recorded from a guidance run, and per-step injection plans.

Thresholds are counted in sampling steps: with ``n_steps`` steps, a site
family with threshold ``tau`` is injected during the first ``n_steps - tau``
steps (the highest-noise ones), i.e. whenever the number of steps still to go
exceeds ``tau``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .backbone.hooks import HookSiteId, attention, features

BANK_FORMAT_VERSION = 1
ENTRY_MAGIC = b"FBK1"


class BankError(ValueError):
    pass


class DuplicateEntryError(BankError):
    pass


class MissingEntryError(BankError):
    pass


class BankMismatchError(BankError):
    pass


@dataclass(frozen=True)
class BankManifest:
    checkpoint_id: str
    prompt: str
    timesteps: tuple[int, ...]
    seed: int
    format_version: int = BANK_FORMAT_VERSION


class FeatureBank:
    """Write-once map ``(site, timestep) -> array`` with its run manifest."""

    def __init__(self, manifest: BankManifest, site_shapes: dict[HookSiteId, tuple[int, ...]]):
        self.manifest = manifest
        self.site_shapes = site_shapes
        self._entries: dict[tuple[HookSiteId, int], torch.Tensor] = {}
        self.sealed = False

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def keys(self):
        return sorted(self._entries, key=lambda k: (-k[1], k[0]))

    def record(self, site: HookSiteId, t: int, value) -> None:
        if self.sealed:
            raise BankError("bank is sealed; it is read-only")
        key = (site, int(t))
        if key in self._entries:
            raise DuplicateEntryError(f"entry {site} @ t={t} already recorded")
        if int(t) not in self.manifest.timesteps:
            raise BankError(f"timestep {t} is not in the bank's plan")
        expected = self.site_shapes.get(site)
        if expected is None:
            raise BankError(f"site {site} is not declared by the bound backbone")
        value = torch.as_tensor(value).detach().to(torch.float32).clone()
        if tuple(value.shape) != tuple(expected):
            raise BankError(f"{site}: shape {tuple(value.shape)} != declared {tuple(expected)}")
        self._entries[key] = value

    def get(self, site: HookSiteId, t: int) -> torch.Tensor:
        try:
            return self._entries[(site, int(t))]
        except KeyError:
            raise MissingEntryError(f"no entry for {site} @ t={t}") from None

    def seal(self) -> "FeatureBank":
        self.sealed = True
        return self


@dataclass(frozen=True)
class InjectionConfig:
    """Which sites are injected and for how many of the early sampling steps.

    ``attention_layers=None`` means every decoder layer that has self-attention;
    call :meth:`resolve` with a backbone to make it explicit.
    """

    tau_f: int = 40
    tau_A: int = 25
    feature_layers: frozenset = frozenset({4})
    attention_layers: frozenset | None = None
    encoder_feature_layers: frozenset = frozenset()
    n_steps: int = 50

    def __post_init__(self):
        for name in ("feature_layers", "encoder_feature_layers", "attention_layers"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, frozenset(int(x) for x in v))
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        for name in ("tau_f", "tau_A"):
            v = getattr(self, name)
            if not 0 <= v <= self.n_steps:
                raise ValueError(f"{name}={v} outside [0, n_steps={self.n_steps}]")

    def resolve(self, backbone) -> "InjectionConfig":
        cfg = self
        if cfg.attention_layers is None:
            cfg = replace(cfg, attention_layers=frozenset(backbone.layers("decoder", "attention_matrix")))
        missing = [str(s) for s in cfg.all_sites() if s not in backbone.site_shapes]
        if missing:
            raise ValueError(f"injection config references missing sites: {missing}")
        return cfg

    def feature_sites(self) -> list[HookSiteId]:
        return [features("decoder", l) for l in sorted(self.feature_layers)] + [
            features("encoder", l) for l in sorted(self.encoder_feature_layers)
        ]

    def attention_sites(self) -> list[HookSiteId]:
        if self.attention_layers is None:
            raise ValueError("attention_layers unresolved; call resolve(backbone) first")
        return [attention("decoder", l) for l in sorted(self.attention_layers)]

    def all_sites(self) -> list[HookSiteId]:
        return self.feature_sites() + self.attention_sites()

    def injects_features(self, step_index: int) -> bool:
        return self.n_steps - step_index > self.tau_f

    def injects_attention(self, step_index: int) -> bool:
        return self.n_steps - step_index > self.tau_A


def overrides_for_step(cfg: InjectionConfig, step_index: int, t: int) -> dict[HookSiteId, tuple[HookSiteId, int]]:
    """Sites to override at sampling step ``step_index`` (evaluated at timestep ``t``),
    each mapped to its bank key."""
    if not 0 <= step_index < cfg.n_steps:
        raise ValueError(f"step_index {step_index} outside [0, {cfg.n_steps})")
    sites = []
    if cfg.injects_features(step_index):
        sites += cfg.feature_sites()
    if cfg.injects_attention(step_index):
        sites += cfg.attention_sites()
    return {s: (s, int(t)) for s in sites}


def _entry_name(site: HookSiteId, t: int) -> str:
    return f"{site}.t{t:04d}.f32"


def _write_entry(path: Path, value: torch.Tensor) -> None:
    arr = np.ascontiguousarray(value.numpy(), dtype="<f4")
    header = ENTRY_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    path.write_bytes(header + arr.tobytes())


def _read_entry(path: Path) -> torch.Tensor:
    data = path.read_bytes()
    if data[:4] != ENTRY_MAGIC:
        raise BankError(f"{path.name}: bad entry header")
    (ndim,) = struct.unpack_from("<I", data, 4)
    shape = struct.unpack_from(f"<{ndim}I", data, 8)
    body = data[8 + 4 * ndim :]
    if len(body) != 4 * int(np.prod(shape)):
        raise BankError(f"{path.name}: truncated entry")
    return torch.from_numpy(np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(shape))


def save_bank(bank: FeatureBank, directory) -> Path:
    directory = Path(directory)
    (directory / "entries").mkdir(parents=True, exist_ok=True)
    m = bank.manifest
    lines = [
        f"format_version={m.format_version}",
        f"checkpoint_id={m.checkpoint_id}",
        f"prompt={m.prompt}",
        f"seed={m.seed}",
        f"timesteps={','.join(map(str, m.timesteps))}",
    ]
    for site, t in bank.keys():
        name = _entry_name(site, t)
        _write_entry(directory / "entries" / name, bank.get(site, t))
        lines.append(f"entry={site} {t} {name}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")
    return directory


def load_bank(directory, backbone) -> FeatureBank:
    """Load a bank and check it was recorded with ``backbone``'s checkpoint."""
    directory = Path(directory)
    fields, entries = {}, []
    for line in (directory / "manifest.txt").read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        if key == "entry":
            site, t, name = value.split(" ")
            entries.append((HookSiteId.parse(site), int(t), name))
        else:
            fields[key] = value
    version = int(fields["format_version"])
    if version != BANK_FORMAT_VERSION:
        raise BankMismatchError(f"bank format version {version}, expected {BANK_FORMAT_VERSION}")
    if fields["checkpoint_id"] != backbone.checkpoint_id:
        raise BankMismatchError(
            f"bank was recorded with checkpoint {fields['checkpoint_id']}, "
            f"not {backbone.checkpoint_id}"
        )
    manifest = BankManifest(
        checkpoint_id=fields["checkpoint_id"],
        prompt=fields["prompt"],
        timesteps=tuple(int(t) for t in fields["timesteps"].split(",") if t),
        seed=int(fields["seed"]),
    )
    bank = FeatureBank(manifest, backbone.site_shapes)
    for site, t, name in entries:
        path = directory / "entries" / name
        if not path.exists():
            raise MissingEntryError(f"missing entry file for ({site}, t={t}): {name}")
        bank.record(site, t, _read_entry(path))
    return bank.seal()

