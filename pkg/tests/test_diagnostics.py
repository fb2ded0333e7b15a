import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from codemae.data import synthetic_pair
from codemae.diagnostics import (
    ProbeConfig,
    alignment_vs_heterogeneity,
    effective_rank,
    gaussian_pyramid,
    heterogeneity_curve,
    linear_probe,
    pca_project,
    rank_correlation,
    singular_spectrum,
    ssim,
)
from codemae.model import ModelConfig, init_model


@pytest.mark.parametrize("k", [1, 2, 7, 64])
def test_effective_rank_of_flat_spectrum(k):
    assert math.isclose(effective_rank(np.ones(k)), k, rel_tol=1e-12)


@given(st.lists(st.floats(1e-3, 10), min_size=1, max_size=30))
def test_effective_rank_bounds(values):
    r = effective_rank(values)
    assert 1 - 1e-9 <= r <= len(values) + 1e-9


def test_effective_rank_rejects_empty():
    with pytest.raises(ValueError):
        effective_rank([0.0, 0.0])


def test_spectrum_of_known_matrix():
    r = np.random.default_rng(0)
    q, _ = np.linalg.qr(r.standard_normal((100, 3)))
    x = q * np.array([3.0, 2.0, 1.0]) + 5.0
    rep = singular_spectrum(x)
    assert rep.values[0] == 1.0 and rep.values.shape == (3,)
    assert np.all(np.diff(rep.values) <= 0)
    np.testing.assert_allclose(rep.values, [1, 2 / 3, 1 / 3], atol=0.05)


def test_spectrum_of_constant_rows_is_rank_one():
    rep = singular_spectrum(np.ones((10, 4)))
    assert rep.effective_rank == 1.0 and rep.values[0] == 1 and not rep.values[1:].any()


def test_ssim_identity_and_symmetry():
    r = np.random.default_rng(1)
    a, b = r.random((32, 32)), r.random((32, 32))
    assert math.isclose(ssim(a, a), 1.0, rel_tol=1e-12)
    assert math.isclose(ssim(a, b), ssim(b, a), rel_tol=1e-12)
    assert -1 <= ssim(a, b) < 0.5
    assert ssim(a, 1 - a) < 0


def test_ssim_shape_mismatch():
    with pytest.raises(ValueError):
        ssim(np.zeros((4, 4)), np.zeros((4, 5)))


def test_pyramid_shapes_and_constant():
    lv = gaussian_pyramid(np.full((64, 64), 0.3), 4)
    assert [x.shape for x in lv] == [(64, 64), (32, 32), (16, 16), (8, 8)]
    np.testing.assert_allclose(lv[-1], 0.3)
    with pytest.raises(ValueError):
        gaussian_pyramid(np.zeros((12, 12)), 4)


def test_heterogeneity_curve_rows():
    rows = heterogeneity_curve([synthetic_pair(s) for s in range(4)], levels=4, gsd=0.5)
    assert [r["level"] for r in rows] == [0, 1, 2, 3]
    assert [r["scale"] for r in rows] == [0.5, 1.0, 2.0, 4.0]
    assert all(-1 <= r["mean_ssim"] <= 1 for r in rows)


def test_identical_pair_curve_is_one():
    p = synthetic_pair(0)
    lum = (0.299 * p.optical[0] + 0.587 * p.optical[1] + 0.114 * p.optical[2]).astype(np.float64)
    p.sar = lum[None]
    for row in heterogeneity_curve([p], levels=3):
        assert abs(row["mean_ssim"] - 1) < 1e-9


def test_alignment_points():
    cfg = ModelConfig(image_size=16, patch_size=4, dim=8, heads=2, enc_depth=1, dec_depth=1, cdr_depth=1,
                      dec_dim=8, dec_heads=2)
    state = init_model(cfg, seed=0)
    pts = alignment_vs_heterogeneity([synthetic_pair(s, 16) for s in range(3)], state)
    assert len(pts) == 3 * 16
    assert all(-1 <= p.ssim <= 1 and -1 <= p.cosine <= 1 for p in pts)
    assert math.isfinite(rank_correlation(pts))


def test_pca_orders_variance_and_fixes_sign():
    r = np.random.default_rng(0)
    x = r.standard_normal((200, 5)) * np.array([5.0, 2.0, 1.0, 0.5, 0.1])
    s = pca_project(x, 2)
    assert s.shape == (200, 2) and s[:, 0].var() > s[:, 1].var()
    np.testing.assert_allclose(np.abs(s), np.abs(pca_project(-x, 2)), atol=1e-9)
    np.testing.assert_allclose(s, pca_project(x, 2))


def test_probe_separable_and_noise():
    r = np.random.default_rng(0)
    y = np.repeat(np.arange(4), 50)
    x = np.eye(4)[y] * 3 + 0.1 * r.standard_normal((200, 4))
    assert linear_probe(np.hstack([x, r.standard_normal((200, 6))]), y) == 1.0
    acc = np.mean([linear_probe(r.standard_normal((200, 8)), y, ProbeConfig(seed=s)) for s in range(5)])
    assert acc < 0.4


def test_probe_needs_two_classes():
    with pytest.raises(ValueError):
        linear_probe(np.zeros((10, 2)), np.zeros(10))
