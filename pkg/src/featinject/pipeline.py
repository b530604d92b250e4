"""Feature/attention-injection translation, DDIM inversion, SDEdit and presets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .backbone.hooks import HookContext, HookSiteId
from .backbone.model import PixelAdapter
from .backbone.prompts import encode_prompt
from .diffmath import TimestepPlan, clip_x0, ddim_invert_step, ddim_step, forward_noise, make_plan, predict_x0
from .features import BankManifest, FeatureBank, InjectionConfig, overrides_for_step
from .guidance import NegPromptSchedule, alpha_at, guided_eps

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenerationSpec:
    prompt: str
    seed: int


@dataclass(frozen=True)
class TranslationRequest:
    """Everything that determines one translation.

    Exactly one of ``guidance_image`` (a real image, ``(3, H, W)`` in [-1, 1])
    and ``guidance_spec`` (prompt + seed of a generated guidance image) is set.
    ``negative_prompt=None`` falls back to the guidance caption: the generation
    prompt, else ``source_prompt``, else the empty prompt. ``n_inv_steps`` and
    ``guidance_steps`` default to the sampling step count.
    """

    target_prompt: str
    guidance_image: np.ndarray | None = field(default=None, repr=False, compare=False)
    guidance_spec: GenerationSpec | None = None
    negative_prompt: str | None = None
    source_prompt: str | None = None
    injection: InjectionConfig = InjectionConfig()
    guidance_scale: float = 7.5
    neg_schedule: NegPromptSchedule = NegPromptSchedule()
    n_inv_steps: int | None = None
    guidance_steps: int | None = None
    seed: int = 0
    share_initial_noise: bool = True

    def __post_init__(self):
        if (self.guidance_image is None) == (self.guidance_spec is None):
            raise ValueError("exactly one of guidance_image / guidance_spec must be given")
        if self.guidance_scale < 1:
            raise ValueError(f"guidance_scale must be >= 1, got {self.guidance_scale}")

    @property
    def n_steps(self) -> int:
        return self.injection.n_steps

    @property
    def is_real(self) -> bool:
        return self.guidance_image is not None

    @property
    def guidance_prompt(self) -> str:
        return "" if self.is_real else self.guidance_spec.prompt

    @property
    def effective_negative_prompt(self) -> str:
        if self.negative_prompt is not None:
            return self.negative_prompt
        if not self.is_real:
            return self.guidance_spec.prompt
        return self.source_prompt or ""


@dataclass
class StepLog:
    step: int
    t: int
    feature_sites: list[HookSiteId]
    attention_sites: list[HookSiteId]
    alpha: float
    w: float

    def line(self) -> str:
        feats = ",".join(map(str, self.feature_sites)) or "-"
        attn = ",".join(map(str, self.attention_sites)) or "-"
        return f"step={self.step} t={self.t} features={feats} attention={attn} alpha={self.alpha:.6f} w={self.w:g}"


@dataclass
class GuidanceRun:
    """Result of processing the guidance image: initial noise, bank, reconstruction."""

    x_T: torch.Tensor
    bank: FeatureBank
    reconstruction: torch.Tensor
    prompt: str
    inversion: list[torch.Tensor] | None = None
    x0: dict[int, torch.Tensor] = field(default_factory=dict)  # predicted x0 at each recorded timestep


@dataclass
class TranslationResult:
    image: torch.Tensor  # model space, (3, H, W)
    x_T: torch.Tensor
    guidance: GuidanceRun
    log: list[StepLog]
    request: TranslationRequest

    @property
    def bank(self) -> FeatureBank:
        return self.guidance.bank

    def injection_counts(self) -> tuple[int, int]:
        return (
            sum(bool(s.feature_sites) for s in self.log),
            sum(bool(s.attention_sites) for s in self.log),
        )

    def write_log(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(s.line() + "\n" for s in self.log))
        return path


def _as_latent(image, backbone, adapter) -> torch.Tensor:
    x = torch.tensor(np.asarray(image), dtype=torch.float64)
    if tuple(x.shape) != tuple(backbone.input_shape):
        raise ValueError(f"image shape {tuple(x.shape)} does not match backbone {backbone.input_shape}")
    return adapter.encode(x)


# Predicted x0 is clamped to the pixel range on passes that start from fresh
# noise or extrapolate with guidance; unguided replays of an inversion stay exact.
SAMPLE_CLIP = 1.0


def clip_for(from_inversion: bool, guidance_scale: float = 1.0) -> float | None:
    return None if from_inversion and guidance_scale == 1.0 else SAMPLE_CLIP


def envelope(x0_ref: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """The pixel range widened elementwise to contain ``x0_ref``.

    Translation clamps its x0 here: an inverted guidance trajectory predicts
    out-of-range x0 at high noise levels that the translation must be free to
    follow, while guidance extrapolation is kept from running off the data range.
    """
    return torch.clamp(x0_ref, max=-SAMPLE_CLIP), torch.clamp(x0_ref, min=SAMPLE_CLIP)


def seeded_noise(shape, seed: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(int(seed))
    return torch.randn(tuple(shape), generator=gen, dtype=torch.float64)


def invert(image, backbone, n_inv_steps: int, adapter=None, watch=None) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """DDIM-invert ``image`` with the empty prompt.

    Moving from ``t`` to ``t_next`` the noise is predicted at the current
    latent with timestep ``t_next``, the timestep sampling will later evaluate.
    Returns ``x_T`` and the trajectory ``[x_0, ..., x_T]`` (``n_inv_steps + 1``).
    """
    adapter = adapter or PixelAdapter()
    s = backbone.schedule
    x = _as_latent(image, backbone, adapter)
    empty = encode_prompt("")
    plan = make_plan(s, n_inv_steps)
    trajectory = [x]
    hooks = HookContext(watch=watch) if watch else None
    for t, t_next in plan.inversion_steps():
        eps = backbone.denoise(x, empty, t_next, hooks)
        x = ddim_invert_step(x, eps, t, t_next, s)
        trajectory.append(x)
    return x, trajectory


def sample(x_T, prompt: str, backbone, n_steps: int, guidance_scale: float = 1.0, watch=None,
           plan: TimestepPlan | None = None, clip: float | None = None) -> torch.Tensor:
    """Plain DDIM sampling with classifier-free guidance (no injection); see :func:`clip_for`."""
    s = backbone.schedule
    plan = plan or make_plan(s, n_steps)
    cond, empty = encode_prompt(prompt), encode_prompt("")
    x = torch.as_tensor(x_T, dtype=torch.float64)
    hooks = HookContext(watch=watch) if watch else None
    for _, t, t_prev in plan.steps():
        if guidance_scale == 1.0:
            eps = backbone.denoise(x, cond, t, hooks)
        else:
            e = backbone.denoise(torch.stack([x, x]), [cond, empty], t, hooks)
            eps = guided_eps(e[0], e[1], None, guidance_scale, 1.0)
        x = ddim_step(x, eps, t, t_prev, s, clip)
    return x


def run_guidance(req: TranslationRequest, backbone, sites, adapter=None, watch=None) -> GuidanceRun:
    """Invert (real) or seed (generated) the guidance, then denoise it while
    recording ``sites`` at every timestep of the translation plan."""
    adapter = adapter or PixelAdapter()
    s = backbone.schedule
    n_steps = req.n_steps
    coarse = make_plan(s, n_steps)
    fine = make_plan(s, req.guidance_steps or n_steps)
    wanted = set(coarse.eval_timesteps)
    if not wanted <= set(fine.eval_timesteps):
        raise ValueError(
            f"guidance plan ({fine.count} steps) does not visit every timestep of the {n_steps}-step plan"
        )
    sites = sorted(set(sites))
    backbone.check_sites(sites)

    inversion = None
    if req.is_real:
        x, inversion = invert(req.guidance_image, backbone, req.n_inv_steps or n_steps, adapter, watch)
    else:
        x = seeded_noise(backbone.input_shape, req.guidance_spec.seed)
    x_T = x
    prompt = req.guidance_prompt
    emb = encode_prompt(prompt)
    clip = clip_for(req.is_real)
    x0_at = {}
    manifest = BankManifest(backbone.checkpoint_id, prompt, coarse.eval_timesteps, req.seed)
    bank = FeatureBank(manifest, backbone.site_shapes)
    for _, t, t_prev in fine.steps():
        hooks = HookContext(record=sites if t in wanted else (), watch=watch)
        eps = backbone.denoise(x, emb, t, hooks)
        for site, value in hooks.recorded.items():
            bank.record(site, t, value[0])
        if t in wanted:
            x0_at[t] = predict_x0(x, eps, t, s) if clip is None else clip_x0(x, eps, t, s, clip)[0]
        x = ddim_step(x, eps, t, t_prev, s, clip)
    return GuidanceRun(x_T, bank.seal(), adapter.decode(x), prompt, inversion, x0_at)


def translate(req: TranslationRequest, backbone, guidance: GuidanceRun | None = None,
              adapter=None, watch=None) -> TranslationResult:
    """Translate the guidance image towards ``req.target_prompt``.

    Both denoising processes start from the same noise. At each step the
    overrides chosen by the injection config replace the corresponding
    activations in every guidance branch (conditional, empty, negative), and the
    branches are combined with classifier-free guidance and negative prompting.
    Each step clamps the predicted x0 to the :func:`envelope` of the guidance's.
    A precomputed ``guidance`` run (e.g. shared across ablations) is reused as is.
    """
    adapter = adapter or PixelAdapter()
    s = backbone.schedule
    cfg = req.injection.resolve(backbone)
    cond = encode_prompt(req.target_prompt)
    empty = encode_prompt("")
    neg = encode_prompt(req.effective_negative_prompt)
    if guidance is None:
        guidance = run_guidance(req, backbone, cfg.all_sites(), adapter, watch)

    if req.share_initial_noise:
        x = guidance.x_T.clone()
        assert torch.equal(x, guidance.x_T), "translation must start from the guidance noise"
    else:
        x = seeded_noise(backbone.input_shape, req.seed + 1)
    x_T = x.clone()

    w = req.guidance_scale
    plan = make_plan(s, req.n_steps)
    steps = []
    for i, t, t_prev in plan.steps():
        keys = overrides_for_step(cfg, i, t)
        overrides = {site: guidance.bank.get(*key) for site, key in keys.items()}
        alpha = alpha_at(req.neg_schedule, 1.0 - t / s.T)
        branches = [cond]
        if w != 1.0:
            branches.append(empty)
            if alpha < 1.0:
                branches.append(neg)
        hooks = HookContext(overrides=overrides, watch=watch)
        eps_all = backbone.denoise(torch.stack([x] * len(branches)), branches, t, hooks)
        eps_neg = eps_all[2] if len(branches) == 3 else None
        eps = eps_all[0] if w == 1.0 else guided_eps(eps_all[0], eps_all[1], eps_neg, w, alpha)
        x = ddim_step(x, eps, t, t_prev, s, envelope(guidance.x0[t]))
        steps.append(StepLog(
            step=i,
            t=t,
            feature_sites=[k for k in keys if k.kind == "resblock_features"],
            attention_sites=[k for k in keys if k.kind == "attention_matrix"],
            alpha=alpha,
            w=w,
        ))
    return TranslationResult(adapter.decode(x), x_T, guidance, steps, req)


def sdedit(image, prompt: str, noise_fraction: float, backbone, n_steps: int = 50,
           guidance_scale: float = 7.5, seed: int = 0, adapter=None) -> torch.Tensor:
    """Noise ``image`` to ``round(noise_fraction * T)`` and denoise it towards ``prompt``.

    The number of sampling steps scales with the noise level
    (``round(noise_fraction * n_steps)``, at least 1).
    """
    if not 0.0 < noise_fraction < 1.0:
        raise ValueError(f"noise_fraction must lie in (0, 1), got {noise_fraction}")
    adapter = adapter or PixelAdapter()
    s = backbone.schedule
    t_start = max(1, int(round(noise_fraction * s.T)))
    x0 = _as_latent(image, backbone, adapter)
    x = forward_noise(x0, t_start, seeded_noise(x0.shape, seed), s)
    steps = min(t_start, max(1, int(round(noise_fraction * n_steps))))
    plan = make_plan(s, steps, t_start=t_start)
    return adapter.decode(sample(x, prompt, backbone, steps, guidance_scale, plan=plan, clip=SAMPLE_CLIP))


ALL_STEPS = "n_steps"  # placeholder threshold meaning "never inject"

PRESETS: dict[str, dict[str, object]] = {
    "default_real": {
        "guidance_scale": 15.0,
        "neg_schedule.kind": "linear",
        "neg_schedule.alpha0": 1.0,
        "injection.tau_f": 40,
        "injection.tau_A": 25,
        "n_inv_steps": 1000,
        "guidance_steps": 1000,
    },
    "default_generated": {
        "guidance_scale": 7.5,
        "neg_schedule.kind": "linear",
        "neg_schedule.alpha0": 0.75,
        "injection.tau_f": 40,
        "injection.tau_A": 25,
    },
    "primitive": {
        "guidance_scale": 7.5,
        "neg_schedule.kind": "exponential",
        "neg_schedule.alpha0": 0.75,
        "injection.tau_f": 25,
        "injection.tau_A": 25,
    },
    "wo_features": {"injection.tau_f": ALL_STEPS},
    "wo_selfattn": {"injection.tau_A": ALL_STEPS},
    "encoder_feat_7": {"injection.encoder_feature_layers": (7,)},
    "wo_negprompt": {"neg_schedule.kind": "constant", "neg_schedule.alpha0": 1.0},
}


def preset(name: str) -> dict[str, object]:
    try:
        return dict(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def apply_overrides(req: TranslationRequest, overrides: dict[str, object]) -> TranslationRequest:
    """Return ``req`` with section-prefixed keys (``injection.tau_f``, ...) replaced."""
    top: dict[str, object] = {}
    inj: dict[str, object] = {}
    neg: dict[str, object] = {}
    for key, value in overrides.items():
        section, _, name = key.rpartition(".")
        if section == "injection":
            inj[name] = value
        elif section == "neg_schedule":
            neg[name] = value
        elif section == "":
            top[name] = value
        else:
            raise KeyError(f"unknown override key {key!r}")
    injection = req.injection
    if inj:
        n = int(inj.get("n_steps", injection.n_steps))
        for k in ("tau_f", "tau_A"):
            if inj.get(k) == ALL_STEPS:
                inj[k] = n
        injection = replace(injection, **inj)
    neg_schedule = replace(req.neg_schedule, **neg) if neg else req.neg_schedule
    return replace(req, injection=injection, neg_schedule=neg_schedule, **top)


def apply_preset(req: TranslationRequest, name: str) -> TranslationRequest:
    return apply_overrides(req, preset(name))
