import numpy as np
import pytest
import torch

from featinject.analysis import (
    FeatureMatrix, attention_matrix_pca, collect, mid_timestep, pca, render_rgb, variance_study,
)
from featinject.backbone.hooks import attention, features
from featinject.diffmath import make_plan
from featinject.pipeline import GenerationSpec


def jacobi_eigh(a, sweeps=100):
    """Cyclic Jacobi rotations; slow but independent of LAPACK."""
    a = np.array(a, dtype=np.float64)
    n = len(a)
    v = np.eye(n)
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off < 1e-15:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0)) if theta != 0 else 1.0
                c = 1 / np.sqrt(t * t + 1)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q], rot[q, p] = s, -s
                a = rot.T @ a @ rot
                v = v @ rot
    return np.diag(a), v


def oracle_components(x, k):
    xc = x - x.mean(axis=0)
    vals, vecs = jacobi_eigh(xc.T @ xc / (len(x) - 1))
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order].T[:k]


def test_jacobi_oracle_sanity():
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    vals, _ = jacobi_eigh(a)
    assert sorted(vals) == pytest.approx([1.0, 3.0])


def test_pca_matches_oracle_5x3():
    x = np.random.default_rng(0).standard_normal((5, 3))
    p = pca(x, 3)
    _, comps = oracle_components(x, 3)
    for a, b in zip(p.components, comps):
        assert min(np.abs(a - b).max(), np.abs(a + b).max()) <= 1e-5


def test_pca_invariants():
    x = np.random.default_rng(1).standard_normal((30, 6)) * np.arange(1, 7)
    p = pca(x, 6)
    assert np.allclose(p.components @ p.components.T, np.eye(6), atol=1e-5)
    assert np.all(np.diff(p.explained) <= 1e-15)
    assert np.all((p.explained >= 0) & (p.explained <= 1))
    assert p.explained.sum() == pytest.approx(1.0, abs=1e-6)
    for row in p.components:
        assert row[np.argmax(np.abs(row))] > 0
    assert np.allclose(p.projections, (x - x.mean(0)) @ p.components.T)


def test_pca_rank_one_line():
    t = np.linspace(-2, 3, 20)[:, None]
    x = np.array([1.0, 2.0, -0.5]) + t * np.array([0.3, -1.0, 2.0])
    p = pca(x, 2)
    assert p.explained[0] == pytest.approx(1.0, abs=1e-6)


def test_pca_errors_and_degenerate():
    x = np.ones((6, 4))
    with pytest.raises(ValueError):
        pca(x, 5)
    with pytest.raises(ValueError):
        pca(x, 0)
    assert pca(x, 3).degenerate
    assert not pca(np.random.default_rng(0).standard_normal((6, 4)), 3).degenerate


def _matrix(rows, n_images, hw):
    ids = np.repeat(np.arange(n_images), hw[0] * hw[1])
    return FeatureMatrix(rows, ids, np.zeros((len(rows), 2), int), features("decoder", 4), 500, hw)


def test_render_constant_is_mid_gray():
    p = pca(_matrix(np.ones((16, 4)), 1, (4, 4)).rows, 3)
    img = render_rgb(p, 0, (4, 4))
    assert img.shape == (4, 4, 3) and np.all(img == 0.5)


def test_render_identical_images_identical():
    one = np.random.default_rng(2).standard_normal((16, 5))
    m = _matrix(np.concatenate([one, one]), 2, (4, 4))
    p = pca(m, 3)
    assert np.array_equal(render_rgb(p, 0, (4, 4)), render_rgb(p, 1, (4, 4)))


def test_render_uses_collection_bounds():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((16, 5)), rng.standard_normal((16, 5))
    base = pca(_matrix(np.concatenate([a, b]), 2, (4, 4)), 3)
    outlier = pca(_matrix(np.concatenate([a, b, 50 + 10 * rng.standard_normal((16, 5))]), 3, (4, 4)), 3)
    assert not np.allclose(render_rgb(base, 0, (4, 4)), render_rgb(outlier, 0, (4, 4)), atol=1e-3)


def test_render_invariant_to_constant_shift():
    p = pca(np.random.default_rng(4).standard_normal((16, 5)), 3)
    shifted = type(p)(p.mean, p.components, p.explained, p.projections + np.array([3.0, -7.0, 0.5]), p.image_ids)
    assert np.allclose(render_rgb(p, 0, (4, 4)), render_rgb(shifted, 0, (4, 4)), atol=1e-12)


def test_render_needs_three_components():
    p = pca(np.random.default_rng(4).standard_normal((16, 5)), 2)
    with pytest.raises(ValueError):
        render_rgb(p, 0, (4, 4))


def test_attention_pca_shapes_and_degenerate():
    A = torch.softmax(torch.randn(2, 64, 64), -1)
    result, img = attention_matrix_pca(A)
    assert result.projections.shape == (64, 3) and img.shape == (8, 8, 3)
    uniform = torch.full((2, 64, 64), 1 / 64)
    assert attention_matrix_pca(uniform)[0].degenerate


def test_mid_timestep():
    from featinject.diffmath import make_schedule

    assert mid_timestep(make_plan(make_schedule(1000), 50)) == 500


def test_collect_shapes_and_determinism(random_backbone):
    items = [GenerationSpec("a red circle", 0), GenerationSpec("a blue square", 1)]
    site = features("decoder", 4)
    m = collect(items, site, 800, random_backbone, n_steps=5)
    assert m.rows.shape == (2 * 16 * 16, 48) and m.spatial_shape == (16, 16)
    assert np.array_equal(m.image_ids[:256], np.zeros(256))
    again = collect(items, site, 800, random_backbone, n_steps=5)
    assert np.array_equal(m.rows, again.rows)
    with pytest.raises(ValueError):
        collect(items, site, 810, random_backbone, n_steps=5)


def test_collect_real_image(random_backbone, toy_image):
    m = collect([toy_image], attention("decoder", 2), 600, random_backbone, n_steps=5)
    assert m.rows.shape == (64, 64)


def test_variance_plumbing(random_backbone):
    with pytest.raises(ValueError):
        variance_study([0], ["a red circle", "a blue ring"], random_backbone)
    prompts = ["a red circle", "a blue ring", "a green cross"]
    r = variance_study([0, 1, 2, 3], prompts, random_backbone, layers=[1, 7])
    assert r.layers == [1, 7] and r.n_sets == 7
    for i in range(2):
        assert r.total[i] >= max(r.same_prompt[i], r.same_seed[i])
    same = variance_study([0, 1], ["a red circle"] * 3, random_backbone, layers=[7])
    assert same.same_seed == [0.0]
