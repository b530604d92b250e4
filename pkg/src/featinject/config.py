"""Flat ``section.key=value`` run configs and their mapping onto translation requests."""

from __future__ import annotations

from pathlib import Path

from .features import InjectionConfig
from .guidance import NegPromptSchedule
from .imageio import load_image
from .pipeline import ALL_STEPS, GenerationSpec, TranslationRequest, apply_overrides, apply_preset


class ConfigError(ValueError):
    pass


def _int(v: str) -> int:
    return int(v)


def _tau(v: str):
    return ALL_STEPS if v == ALL_STEPS else int(v)


def _layers(v: str):
    v = v.strip()
    if v in ("all", "none", "None"):
        return None
    return frozenset(int(x) for x in v.split(",") if x.strip())


def _opt_int(v: str):
    return None if v in ("", "none", "None") else int(v)


def _opt_str(v: str):
    return None if v in ("none", "None") else v


def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


REQUEST_FIELDS = {
    "target_prompt": str,
    "negative_prompt": _opt_str,
    "source_prompt": _opt_str,
    "guidance_scale": float,
    "seed": _int,
    "n_inv_steps": _opt_int,
    "guidance_steps": _opt_int,
    "share_initial_noise": _bool,
    "injection.tau_f": _tau,
    "injection.tau_A": _tau,
    "injection.feature_layers": _layers,
    "injection.attention_layers": _layers,
    "injection.encoder_feature_layers": _layers,
    "injection.n_steps": _int,
    "neg_schedule.kind": str,
    "neg_schedule.alpha0": float,
}
GUIDANCE_KEYS = ("guidance.image", "guidance.prompt", "guidance.seed")
KNOWN_KEYS = frozenset(REQUEST_FIELDS) | frozenset(GUIDANCE_KEYS) | {"preset"}


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    """``key=value`` per line; ``#`` comments and blank lines are skipped."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{origin}:{lineno}: expected key=value, got {line!r}")
        values[key.strip()] = value.strip()
    return values


def load_config(path) -> dict[str, str]:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))


def parse_overrides(items) -> dict[str, str]:
    return parse_config_text("\n".join(items or ()), "--set")


def check_keys(values: dict[str, str], known=KNOWN_KEYS) -> None:
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")


def request_from_config(values: dict[str, str], base_dir=None, resolution: int | None = None) -> TranslationRequest:
    """Defaults, then the named preset, then every other key."""
    check_keys(values)
    if "target_prompt" not in values:
        raise ConfigError("missing target_prompt")
    if "guidance.image" in values:
        path = Path(values["guidance.image"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        if not path.exists():
            raise ConfigError(f"guidance.image: {path} does not exist")
        guidance = {"guidance_image": load_image(path, resolution)}
    elif "guidance.prompt" in values:
        seed = int(values.get("guidance.seed", values.get("seed", 0)))
        guidance = {"guidance_spec": GenerationSpec(values["guidance.prompt"], seed)}
    else:
        raise ConfigError("set guidance.image or guidance.prompt")
    req = TranslationRequest(values["target_prompt"], **guidance)
    if values.get("preset"):
        req = apply_preset(req, values["preset"])
    overrides = {}
    for key, parse in REQUEST_FIELDS.items():
        if key in values and key != "target_prompt":
            try:
                overrides[key] = parse(values[key])
            except ValueError as e:
                raise ConfigError(f"{key}: {e}") from None
    return apply_overrides(req, overrides)


def _fmt_layers(v) -> str:
    return "all" if v is None else ",".join(str(x) for x in sorted(v))


def request_to_config(req: TranslationRequest, image_path=None) -> str:
    """Serialise a request so that :func:`request_from_config` rebuilds it."""
    lines = [f"target_prompt={req.target_prompt}"]
    if req.is_real:
        if image_path is None:
            raise ConfigError("real-image requests need the guidance image path")
        lines.append(f"guidance.image={image_path}")
    else:
        lines += [f"guidance.prompt={req.guidance_spec.prompt}", f"guidance.seed={req.guidance_spec.seed}"]
    for key in ("negative_prompt", "source_prompt"):
        v = getattr(req, key)
        lines.append(f"{key}={'none' if v is None else v}")
    lines += [
        f"guidance_scale={req.guidance_scale!r}",
        f"seed={req.seed}",
        f"n_inv_steps={req.n_inv_steps if req.n_inv_steps is not None else 'none'}",
        f"guidance_steps={req.guidance_steps if req.guidance_steps is not None else 'none'}",
        f"share_initial_noise={str(req.share_initial_noise).lower()}",
    ]
    inj: InjectionConfig = req.injection
    lines += [
        f"injection.n_steps={inj.n_steps}",
        f"injection.tau_f={inj.tau_f}",
        f"injection.tau_A={inj.tau_A}",
        f"injection.feature_layers={_fmt_layers(inj.feature_layers)}",
        f"injection.attention_layers={_fmt_layers(inj.attention_layers)}",
        f"injection.encoder_feature_layers={_fmt_layers(inj.encoder_feature_layers)}",
    ]
    neg: NegPromptSchedule = req.neg_schedule
    lines += [f"neg_schedule.kind={neg.kind}", f"neg_schedule.alpha0={neg.alpha0!r}"]
    return "\n".join(lines) + "\n"
