import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from codemae import numcore as nc
from codemae.data import make_mask
from codemae.model import (
    MaskPlan,
    ModelConfig,
    condition,
    decode_cdr,
    decode_reconstruct,
    encode_visible,
    frozen_random_teacher,
    global_pool,
    init_model,
    stack_plans,
    teacher_features,
)

SMALL = ModelConfig(image_size=16, patch_size=4, dim=16, heads=2, enc_depth=2, dec_depth=2, cdr_depth=1,
                    dec_dim=8, dec_heads=2, mlp_ratio=2)


def test_default_geometry():
    cfg = ModelConfig()
    assert cfg.num_patches == 64 and cfg.dec_depth == 8
    assert len(init_model(cfg).decoder) == 8


def test_imagenet_geometry_mask_counts():
    cfg = ModelConfig(image_size=224, patch_size=16)
    plan = make_mask(cfg.num_patches, 0.75, np.random.default_rng(0))
    assert cfg.num_patches == 196 and plan.num_visible == 49 and plan.num_masked == 147


@given(st.integers(4, 400), st.floats(0.05, 0.95), st.integers(0, 2**31))
def test_mask_partition(m, ratio, seed):
    try:
        plan = make_mask(m, ratio, np.random.default_rng(seed))
    except ValueError:
        return
    assert sorted(np.concatenate([plan.visible, plan.masked]).tolist()) == list(range(m))
    assert plan.mask.sum() == plan.num_masked
    order = np.concatenate([plan.visible, plan.masked])
    np.testing.assert_array_equal(order[plan.restore], np.arange(m))


def test_mask_rejects_bad_ratio():
    rng = np.random.default_rng(0)
    for r in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            make_mask(16, r, rng)


def test_shapes_through_every_path():
    state = init_model(SMALL, seed=0)
    r = np.random.default_rng(0)
    plans = [make_mask(16, 0.75, r) for _ in range(3)]
    opt = r.random((3, 3, 16, 16)).astype(np.float32)
    sar = r.random((3, 1, 16, 16)).astype(np.float32)
    xo = encode_visible(state, opt, "optical", plans)
    xs = encode_visible(state, sar, "sar", plans)
    assert xo.shape == xs.shape == (3, 4, 16)
    assert decode_reconstruct(state, xo, plans, "optical").shape == (3, 16, 48)
    assert decode_reconstruct(state, xs, plans, "sar").shape == (3, 16, 16)
    assert decode_cdr(state, xo, plans).shape == (3, 16, 16)
    co, cs = condition(state, xo, xs)
    assert co.shape == cs.shape == xo.shape
    z = global_pool(co)
    np.testing.assert_allclose(np.linalg.norm(z.data, axis=-1), 1.0, rtol=1e-5)
    assert xo.dtype == np.float32


def test_single_image_matches_batch_row():
    state = init_model(SMALL, seed=1)
    r = np.random.default_rng(1)
    plan = make_mask(16, 0.75, r)
    img = r.random((2, 3, 16, 16)).astype(np.float32)
    batch = encode_visible(state, img, "optical", [plan, plan]).data
    np.testing.assert_allclose(encode_visible(state, img[1], "optical", plan).data, batch[1], rtol=1e-6)


def test_encoder_permutation_equivariant_over_visible_order():
    state = init_model(SMALL, seed=2)
    r = np.random.default_rng(2)
    plan = make_mask(16, 0.5, r)
    perm = r.permutation(plan.num_visible)
    other = MaskPlan(plan.mask, plan.ratio, plan.visible[perm], plan.masked)
    img = r.random((3, 16, 16)).astype(np.float32)
    a = encode_visible(state, img, "optical", plan).data
    b = encode_visible(state, img, "optical", other).data
    np.testing.assert_allclose(a[perm], b, atol=1e-5)


def test_modalities_share_encoder_but_not_embedding():
    state = init_model(SMALL, seed=0)
    names = [n for n, _ in state.named_parameters()]
    assert any(n.startswith("patch_embed.proj.optical") for n in names)
    assert any(n.startswith("patch_embed.proj.sar") for n in names)
    assert not any("optical" in n or "sar" in n for n in names if n.startswith("encoder"))


def test_mismatched_plans_rejected():
    r = np.random.default_rng(0)
    with pytest.raises(ValueError):
        stack_plans([make_mask(16, 0.75, r), make_mask(16, 0.5, r)])
    state = init_model(SMALL)
    with pytest.raises(ValueError):
        encode_visible(state, np.zeros((3, 16, 16), np.float32), "optical", make_mask(64, 0.75, r))


def test_init_is_seeded():
    a = init_model(SMALL, seed=5).state_dict()
    b = init_model(SMALL, seed=5).state_dict()
    c = init_model(SMALL, seed=6).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)


def test_state_dict_roundtrip_and_mismatch():
    a, b = init_model(SMALL, seed=0), init_model(SMALL, seed=1)
    b.load_state_dict(a.state_dict())
    assert all(np.array_equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))
    sd = a.state_dict()
    sd.pop(next(iter(sd)))
    with pytest.raises(KeyError):
        b.load_state_dict(sd)


def test_teacher_is_frozen_and_visible_only():
    teacher = frozen_random_teacher(SMALL, 3)
    r = np.random.default_rng(0)
    plans = [make_mask(16, 0.75, r) for _ in range(2)]
    opt = r.random((2, 3, 16, 16)).astype(np.float32)
    feats = teacher_features(opt, plans, teacher)
    assert feats.shape == (2, 4, SMALL.dim) and not feats.requires_grad
    again = teacher_features(opt, plans, teacher)
    np.testing.assert_array_equal(feats.data, again.data)


def test_ca_buffer_is_residual():
    state = init_model(SMALL, seed=0)
    for t in (state.ca_buffer.q.weight, state.ca_buffer.k.weight, state.ca_buffer.v.weight):
        t.data[:] = 0
    x = nc.Tensor(np.random.default_rng(0).standard_normal((2, 4, 16)).astype(np.float32))
    y = nc.Tensor(np.random.default_rng(1).standard_normal((2, 4, 16)).astype(np.float32))
    co, _ = condition(state, x, y)
    np.testing.assert_array_equal(co.data, x.data)
