import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from featinject.guidance import NegPromptSchedule, alpha_at, cfg, guided_eps, negative_mix


def arrays(seed, n=3):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(3, 8, 8, generator=g, dtype=torch.float64) for _ in range(n)]


def test_cfg_examples():
    c, r, _ = arrays(0)
    assert torch.equal(cfg(c, r, 1.0), c)
    assert torch.equal(cfg(c, c, 7.5), c)
    out = cfg(c, r, 7.5)
    for ci, ri, oi in zip(c.flatten()[:40], r.flatten()[:40], out.flatten()[:40]):
        assert float(oi) == pytest.approx(7.5 * float(ci) - 6.5 * float(ri), abs=1e-12)
    with pytest.raises(ValueError):
        cfg(c, r[:, :4], 2.0)


def test_negative_mix_examples():
    e, n, _ = arrays(1)
    assert torch.equal(negative_mix(e, n, 1.0), e)
    assert torch.equal(negative_mix(e, n, 0.0), n)
    out = negative_mix(e, n, 0.75)
    for ei, ni, oi in zip(e.flatten()[:40], n.flatten()[:40], out.flatten()[:40]):
        assert float(oi) == pytest.approx(0.75 * float(ei) + 0.25 * float(ni), abs=1e-12)
    with pytest.raises(ValueError):
        negative_mix(e, n, 1.5)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), alpha=st.floats(0, 1), w=st.floats(1, 20))
def test_composite_formula(seed, alpha, w):
    c, e, n = arrays(seed)
    out = guided_eps(c, e, n, w, alpha)
    ref = w * c + (1 - w) * (alpha * e + (1 - alpha) * n)
    assert float((out - ref).abs().max()) <= 1e-6
    mix = negative_mix(e, n, alpha)
    lo, hi = torch.minimum(e, n), torch.maximum(e, n)
    assert bool(((mix >= lo - 1e-12) & (mix <= hi + 1e-12)).all())


def test_alpha_one_is_plain_cfg():
    c, e, n = arrays(3)
    assert torch.equal(guided_eps(c, e, n, 7.5, 1.0), cfg(c, e, 7.5))
    assert torch.equal(guided_eps(c, e, None, 7.5, 0.3), cfg(c, e, 7.5))
    neutral = NegPromptSchedule()
    assert neutral.is_neutral
    for f in np.linspace(0, 1, 11):
        assert alpha_at(neutral, f) == 1.0


def test_alpha_schedules():
    assert alpha_at(NegPromptSchedule("linear", 1.0), 0.0) == 1.0
    assert alpha_at(NegPromptSchedule("linear", 1.0), 0.3) == pytest.approx(0.7)
    assert alpha_at(NegPromptSchedule("exponential"), 0.0) == 1.0
    assert alpha_at(NegPromptSchedule("exponential"), 1.0) == pytest.approx(math.exp(-6), rel=1e-12)
    assert alpha_at(NegPromptSchedule("exponential"), 1.0) == pytest.approx(0.00248, abs=1e-5)
    assert alpha_at(NegPromptSchedule("linear", 0.75), 0.9) == 0.0
    assert alpha_at(NegPromptSchedule("constant", 0.4), 0.5) == 0.4
    with pytest.raises(ValueError):
        alpha_at(NegPromptSchedule(), 1.2)
    with pytest.raises(ValueError):
        NegPromptSchedule("cosine")
    with pytest.raises(ValueError):
        NegPromptSchedule("linear", 1.1)


@settings(max_examples=200, deadline=None)
@given(kind=st.sampled_from(["linear", "exponential", "constant"]), a0=st.floats(0, 1), f=st.floats(0, 1))
def test_alpha_clamped(kind, a0, f):
    assert 0.0 <= alpha_at(NegPromptSchedule(kind, a0), f) <= 1.0
