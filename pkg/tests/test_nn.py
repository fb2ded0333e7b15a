import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from codemae import numcore as nc
from codemae.nn import (
    AttentionParams,
    BlockParams,
    LinearParams,
    PatchEmbedParams,
    cross_attention,
    named_parameters,
    patch_embed,
    patchify,
    self_attention,
    transformer_block,
    trunc_normal,
    unpatchify,
)
from codemae.numcore import Tensor


@given(st.integers(1, 3), st.sampled_from([1, 3]), st.sampled_from([2, 4]), st.integers(1, 3), st.integers(0, 999))
def test_patchify_roundtrip(b, c, p, g, seed):
    img = np.random.default_rng(seed).random((b, c, p * g, p * g))
    patches = patchify(img, p)
    assert patches.shape == (b, g * g, c * p * p)
    np.testing.assert_array_equal(unpatchify(patches, p, c, (g, g)), img)


def test_patch_layout_channel_major():
    img = np.arange(2 * 4 * 4, dtype=float).reshape(2, 4, 4)
    first = patchify(img, 2)[0]
    np.testing.assert_array_equal(first, [0, 1, 4, 5, 16, 17, 20, 21])
    second = patchify(img, 2)[1]
    np.testing.assert_array_equal(second[:4], [2, 3, 6, 7])


def test_patchify_rejects_ragged():
    with pytest.raises(ValueError):
        patchify(np.zeros((1, 6, 6)), 4)


def test_trunc_normal_bounds(rng):
    w = trunc_normal(rng, (200, 200), std=0.02)
    assert np.abs(w).max() <= 0.04
    assert abs(w.std() - 0.02) < 0.004


def test_patch_embed_shapes_and_channel_check(rng):
    p = PatchEmbedParams.init(rng, 16, 4, 8)
    assert patch_embed(rng.random((2, 3, 16, 16)), p, "optical").shape == (2, 16, 8)
    assert patch_embed(rng.random((1, 16, 16)), p, "sar").shape == (16, 8)
    with pytest.raises(ValueError):
        patch_embed(rng.random((1, 16, 16)), p, "optical")


def test_self_attention_shape_and_head_split(rng):
    p = AttentionParams.init(rng, 8, 2, dtype=np.float64)
    x = Tensor(rng.standard_normal((3, 5, 8)))
    assert self_attention(x, p).shape == (3, 5, 8)
    with pytest.raises(ValueError):
        AttentionParams.init(rng, 8, 3)


def test_self_attention_permutation_equivariant(rng):
    p = AttentionParams.init(rng, 8, 2, std=0.3, dtype=np.float64)
    x = rng.standard_normal((5, 8))
    perm = rng.permutation(5)
    a = self_attention(Tensor(x), p).data
    b = self_attention(Tensor(x[perm]), p).data
    np.testing.assert_allclose(a[perm], b, atol=1e-12)


def test_multihead_matches_manual(rng):
    d, h = 8, 2
    p = AttentionParams.init(rng, d, h, std=0.4, dtype=np.float64)
    x = rng.standard_normal((4, d))
    out = self_attention(Tensor(x), p).data
    q, k, v = (x @ lin.weight.data + lin.bias.data for lin in (p.q, p.k, p.v))
    heads = []
    for i in range(h):
        s = slice(i * d // h, (i + 1) * d // h)
        sc = q[:, s] @ k[:, s].T / np.sqrt(d // h)
        a = np.exp(sc - sc.max(1, keepdims=True))
        heads.append((a / a.sum(1, keepdims=True)) @ v[:, s])
    ref = np.concatenate(heads, 1) @ p.out.weight.data + p.out.bias.data
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_cross_attention_residual_and_scale(rng):
    d = 6
    p = AttentionParams.init(rng, d, 1, bias=False, out_proj=False, std=0.4, dtype=np.float64)
    x, c = rng.standard_normal((3, d)), rng.standard_normal((4, d))
    sc = (x @ p.q.weight.data) @ (c @ p.k.weight.data).T / np.sqrt(d)
    a = np.exp(sc - sc.max(1, keepdims=True))
    ref = x + (a / a.sum(1, keepdims=True)) @ (c @ p.v.weight.data)
    np.testing.assert_allclose(cross_attention(Tensor(x), Tensor(c), p).data, ref, atol=1e-12)
    p.v.weight.data[:] = 0
    np.testing.assert_allclose(cross_attention(Tensor(x), Tensor(c), p).data, x)


def test_cross_attention_width_mismatch(rng):
    p = AttentionParams.init(rng, 6, 1, bias=False, out_proj=False)
    with pytest.raises(nc.ShapeError):
        cross_attention(Tensor(np.zeros((2, 6))), Tensor(np.zeros((2, 5))), p)


def test_block_preserves_shape(rng):
    b = BlockParams.init(rng, 8, 2, 4)
    assert transformer_block(Tensor(rng.standard_normal((2, 5, 8))), b).shape == (2, 5, 8)


def test_named_parameters_are_unique(rng):
    b = BlockParams.init(rng, 8, 2, 4)
    names = [n for n, _ in named_parameters(b)]
    assert len(names) == len(set(names))
    assert "attn.q.weight" in names and "fc2.bias" in names


def test_linear_params_init_zero_bias(rng):
    lp = LinearParams.init(rng, 3, 4)
    assert lp.weight.shape == (3, 4) and not lp.bias.data.any()
