"""Noise schedules and deterministic (eta = 0) DDIM arithmetic.

Timestep ``0`` is the clean state: ``alpha_bar[0] == 1`` so the forward process
is the identity there. All update functions work on numpy arrays and torch
tensors alike; schedule coefficients are evaluated as float64 Python scalars
and the arithmetic happens in the caller's dtype.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

SCHEDULE_KINDS = ("linear", "cosine")

# linear beta endpoints (those of latent text-to-image backbones) and the cosine offset / max beta
LINEAR_BETA_START = 8.5e-4
LINEAR_BETA_END = 1.2e-2
COSINE_OFFSET = 0.008
COSINE_MAX_BETA = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    num_train_steps: int
    alpha_bar: np.ndarray = field(repr=False)
    kind: str = "linear"

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.shape != (self.num_train_steps + 1,):
            raise ValueError(
                f"alpha_bar must have length {self.num_train_steps + 1}, got {ab.shape}"
            )
        if ab[0] != 1.0:
            raise ValueError("alpha_bar[0] must be exactly 1")
        if not np.all(np.diff(ab) < 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if ab[-1] <= 0:
            raise ValueError("alpha_bar[T] must be positive")
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def T(self) -> int:
        return self.num_train_steps

    def signal(self, t: int) -> float:
        """sqrt(alpha_bar[t])"""
        return math.sqrt(self.alpha_bar[self._check_t(t)])

    def noise(self, t: int) -> float:
        """sqrt(1 - alpha_bar[t])"""
        return math.sqrt(1.0 - self.alpha_bar[self._check_t(t)])

    def _check_t(self, t) -> int:
        t = int(t)
        if not 0 <= t <= self.num_train_steps:
            raise ValueError(f"timestep {t} outside [0, {self.num_train_steps}]")
        return t


def _cosine_f(t: float, T: int) -> float:
    return math.cos((t / T + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2


def make_schedule(num_train_steps: int, kind: str = "linear") -> NoiseSchedule:
    """Build a schedule with ``num_train_steps + 1`` cumulative coefficients.

    ``linear`` is linear in the per-step beta (8.5e-4 .. 1.2e-2). ``cosine`` uses
    ``alpha_bar[t] = f(t) / f(0)`` with ``f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2)``,
    with each per-step ratio floored at ``1 - 0.999`` so ``alpha_bar[T] > 0``.
    """
    if int(num_train_steps) != num_train_steps or num_train_steps < 2:
        raise ValueError(f"num_train_steps must be an integer >= 2, got {num_train_steps}")
    T = int(num_train_steps)
    if kind == "linear":
        betas = np.linspace(LINEAR_BETA_START, LINEAR_BETA_END, T, dtype=np.float64)
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    elif kind == "cosine":
        f0 = _cosine_f(0, T)
        alpha_bar = np.array([_cosine_f(t, T) / f0 for t in range(T + 1)])
        alpha_bar[0] = 1.0
        for t in range(1, T + 1):
            floor = alpha_bar[t - 1] * (1.0 - COSINE_MAX_BETA)
            if alpha_bar[t] < floor:
                alpha_bar[t] = floor
    else:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    return NoiseSchedule(T, alpha_bar, kind)


@dataclass(frozen=True)
class TimestepPlan:
    """Decreasing timesteps ``T_start > ... > 0`` visited by a sampler.

    ``timesteps`` holds ``count + 1`` entries and always ends at the clean state
    ``0``. Step ``i`` evaluates the denoiser at ``timesteps[i]`` and moves to
    ``timesteps[i + 1]``; the final step lands directly on ``t = 0`` through the
    predicted-clean-image formula. Reversed, the same pairs drive inversion.
    """

    timesteps: tuple[int, ...]

    def __post_init__(self):
        ts = tuple(int(t) for t in self.timesteps)
        if len(ts) < 2 or ts[-1] != 0:
            raise ValueError("plan needs at least one step and must end at 0")
        if any(a <= b for a, b in zip(ts, ts[1:])):
            raise ValueError("plan timesteps must be strictly decreasing")
        object.__setattr__(self, "timesteps", ts)

    @property
    def count(self) -> int:
        return len(self.timesteps) - 1

    def __len__(self) -> int:
        return self.count

    @property
    def eval_timesteps(self) -> tuple[int, ...]:
        """Timesteps at which the denoiser runs (all but the terminal 0)."""
        return self.timesteps[:-1]

    def steps(self) -> Iterator[tuple[int, int, int]]:
        """Yield ``(step_index, t, t_prev)`` in sampling order."""
        for i in range(self.count):
            yield i, self.timesteps[i], self.timesteps[i + 1]

    def inversion_steps(self) -> Iterator[tuple[int, int]]:
        """Yield ``(t, t_next)`` in inversion order (low to high noise)."""
        ts = self.timesteps[::-1]
        for a, b in zip(ts, ts[1:]):
            yield a, b

    def validate(self, s: NoiseSchedule) -> "TimestepPlan":
        if self.timesteps[0] > s.num_train_steps:
            raise ValueError(f"plan starts at {self.timesteps[0]} > T={s.num_train_steps}")
        return self


def make_plan(s: NoiseSchedule, n_steps: int, t_start: int | None = None) -> TimestepPlan:
    """Evenly spaced plan of ``n_steps`` steps from ``t_start`` (default T) to 0.

    With ``n_steps == T`` every timestep 0..T appears. With ``n_steps == 1`` the
    plan is ``(T, 0)``: one jump straight to the clean estimate.
    """
    start = s.num_train_steps if t_start is None else int(t_start)
    if not 1 <= start <= s.num_train_steps:
        raise ValueError(f"t_start {start} outside [1, {s.num_train_steps}]")
    if int(n_steps) != n_steps or not 1 <= n_steps <= start:
        raise ValueError(f"n_steps must be in [1, {start}], got {n_steps}")
    grid = np.rint(np.linspace(start, 0, int(n_steps) + 1)).astype(int)
    return TimestepPlan(tuple(int(t) for t in grid))


def _check_shapes(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def forward_noise(x0, t: int, z, s: NoiseSchedule):
    """sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * z"""
    _check_shapes(x0, z)
    return s.signal(t) * x0 + s.noise(t) * z


def predict_x0(x_t, eps, t: int, s: NoiseSchedule):
    _check_shapes(x_t, eps)
    return (x_t - s.noise(t) * eps) / s.signal(t)


def _ddim_move(x_t, eps, t_from: int, t_to: int, s: NoiseSchedule):
    x0_hat = predict_x0(x_t, eps, t_from, s)
    return s.signal(t_to) * x0_hat + s.noise(t_to) * eps


def clip_x0(x_t, eps, t: int, s: NoiseSchedule, clip):
    """Clamp the predicted x0 and re-derive the noise from it.

    ``clip`` is a bound ``c`` (range ``[-c, c]``) or an elementwise ``(lo, hi)`` pair.
    """
    lo, hi = (-clip, clip) if isinstance(clip, (int, float)) else clip
    x0_hat = predict_x0(x_t, eps, t, s).clip(lo, hi)
    return x0_hat, (x_t - s.signal(t) * x0_hat) / s.noise(t)


def ddim_step(x_t, eps, t: int, t_prev: int, s: NoiseSchedule, clip=None):
    """One deterministic sampling step from ``t`` down to ``t_prev``; see :func:`clip_x0`."""
    if not t > t_prev >= 0:
        raise ValueError(f"ddim_step needs t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    if clip is None:
        return _ddim_move(x_t, eps, t, t_prev, s)
    x0_hat, eps = clip_x0(x_t, eps, t, s, clip)
    return s.signal(t_prev) * x0_hat + s.noise(t_prev) * eps


def ddim_invert_step(x_t, eps, t: int, t_next: int, s: NoiseSchedule):
    """One inversion step from ``t`` up to ``t_next``; exact inverse of :func:`ddim_step`."""
    if not t_next > t >= 0:
        raise ValueError(f"ddim_invert_step needs t_next > t >= 0, got t={t}, t_next={t_next}")
    return _ddim_move(x_t, eps, t, t_next, s)
