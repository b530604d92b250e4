"""Classifier-free guidance, negative prompting and the alpha schedulers."""

from __future__ import annotations

import math
from dataclasses import dataclass

NEG_SCHEDULE_KINDS = ("linear", "exponential", "constant")
EXP_RATE = 6.0


def _check_shapes(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def cfg(eps_cond, eps_ref, w: float):
    """w * eps_cond + (1 - w) * eps_ref

    Evaluated as ``eps_ref + w * (eps_cond - eps_ref)`` so equal inputs come
    back unchanged for any ``w``; ``w == 1`` returns ``eps_cond`` itself.
    """
    _check_shapes(eps_cond, eps_ref)
    if w == 1.0:
        return eps_cond
    return eps_ref + w * (eps_cond - eps_ref)


def negative_mix(eps_empty, eps_neg, alpha: float):
    """alpha * eps_empty + (1 - alpha) * eps_neg; replaces the reference branch of :func:`cfg`."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    _check_shapes(eps_empty, eps_neg)
    return alpha * eps_empty + (1 - alpha) * eps_neg


@dataclass(frozen=True)
class NegPromptSchedule:
    """Weight of the empty prompt inside the reference branch over a sampling run.

    ``linear``: alpha0 - progress; ``exponential``: exp(-6 * progress), alpha0
    unused; ``constant``: alpha0. Progress is 0 at the first sampling step and
    grows towards 1; every value is clamped into [0, 1].
    """

    kind: str = "constant"
    alpha0: float = 1.0

    def __post_init__(self):
        if self.kind not in NEG_SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0.0 <= self.alpha0 <= 1.0:
            raise ValueError(f"alpha0 must lie in [0, 1], got {self.alpha0}")

    @property
    def is_neutral(self) -> bool:
        return self.kind == "constant" and self.alpha0 == 1.0


def alpha_at(sched: NegPromptSchedule, t_frac: float) -> float:
    if not 0.0 <= t_frac <= 1.0:
        raise ValueError(f"t_frac must lie in [0, 1], got {t_frac}")
    if sched.kind == "linear":
        a = sched.alpha0 - t_frac
    elif sched.kind == "exponential":
        a = math.exp(-EXP_RATE * t_frac)
    else:
        a = sched.alpha0
    return min(1.0, max(0.0, a))


def guided_eps(eps_cond, eps_empty, eps_neg, w: float, alpha: float):
    """Full guidance combination; with alpha == 1 this is exactly plain :func:`cfg`."""
    if alpha == 1.0 or eps_neg is None:
        return cfg(eps_cond, eps_empty, w)
    return cfg(eps_cond, negative_mix(eps_empty, eps_neg, alpha), w)
