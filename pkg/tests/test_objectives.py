import math
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from codemae import numcore as nc
from codemae.data import make_mask
from codemae.model import MaskPlan, ModelConfig, frozen_random_teacher, init_model
from codemae.numcore import Tensor
from codemae.objectives import (
    Batch,
    BatchingError,
    ContrastiveError,
    DegenerateMaskError,
    ObjectiveConfig,
    cdr_target,
    degrade,
    loss_ccl,
    loss_cdr,
    loss_mae,
    loss_okd,
    total_loss,
)

sys.path.insert(0, str(Path(__file__).parent))
import oracles  # noqa: E402

F32 = np.float32
SMALL = ModelConfig(image_size=16, patch_size=4, dim=16, heads=2, enc_depth=1, dec_depth=1, cdr_depth=1,
                    dec_dim=16, dec_heads=2, mlp_ratio=2)


def rel(a, b):
    return abs(a - b) / max(1.0, abs(b))


def random_case(seed, b=4, m=16, p=4):
    r = np.random.default_rng(seed)
    plans = [make_mask(m, 0.75, r) for _ in range(b)]
    arrs = dict(
        Ro=r.standard_normal((b, m, 3 * p * p)), Rs=r.standard_normal((b, m, p * p)),
        Po=r.random((b, m, 3 * p * p)), Ps=r.random((b, m, p * p)),
        Rco=r.standard_normal((b, m, p * p)), Rcs=r.standard_normal((b, m, p * p)),
    )
    return plans, {k: v.astype(F32) for k, v in arrs.items()}


# -- identities ----------------------------------------------------------------------

def test_perfect_predictions_give_zero():
    plans, a = random_case(0)
    assert float(loss_mae(Tensor(a["Po"]), Tensor(a["Ps"]), a["Po"], a["Ps"], plans).data) == 0.0
    t_o = cdr_target(a["Ps"], 1, "grayscale", 1)
    t_s = cdr_target(a["Po"], 3, "grayscale", 1)
    assert float(loss_cdr(Tensor(t_o), Tensor(t_s), a["Po"], a["Ps"], plans, "grayscale", 4).data) == 0.0
    x = np.random.default_rng(1).standard_normal((2, 4, 8)).astype(F32)
    assert float(loss_okd(x, Tensor(x)).data) == 0.0


@pytest.mark.parametrize("n", [2, 4, 8, 16])
def test_ccl_identical_embeddings_is_log_n(n):
    v = np.zeros((n, 8))
    v[:, 0] = 1.0
    val = float(loss_ccl(Tensor(v), Tensor(v), 0.07).data)
    assert abs(val - math.log(n)) < 1e-4


def test_ccl_orthogonal_pair_value():
    e = np.eye(2, 4)
    val = float(loss_ccl(Tensor(e), Tensor(e), 0.07).data)
    assert math.isclose(val, math.log1p(math.exp(-1 / 0.07)), rel_tol=1e-9)
    assert abs(val - 6.2e-7) < 0.05e-7


def test_ccl_literal_sum_scales_by_n():
    r = np.random.default_rng(3)
    zo = nc.l2_normalize(Tensor(r.standard_normal((5, 6)))).data
    zs = nc.l2_normalize(Tensor(r.standard_normal((5, 6)))).data
    mean = float(loss_ccl(Tensor(zo), Tensor(zs)).data)
    total = float(loss_ccl(Tensor(zo), Tensor(zs), literal_sum=True).data)
    assert math.isclose(total, 5 * mean, rel_tol=1e-12)


def test_ccl_row_permutation_invariance():
    r = np.random.default_rng(4)
    zo = nc.l2_normalize(Tensor(r.standard_normal((6, 5)))).data
    zs = nc.l2_normalize(Tensor(r.standard_normal((6, 5)))).data
    perm = r.permutation(6)
    a = float(loss_ccl(Tensor(zo), Tensor(zs)).data)
    b = float(loss_ccl(Tensor(zo[perm]), Tensor(zs[perm])).data)
    assert math.isclose(a, b, rel_tol=1e-12)


def test_ccl_errors():
    with pytest.raises(ContrastiveError):
        loss_ccl(Tensor(np.eye(1, 3)), Tensor(np.eye(1, 3)))
    with pytest.raises(ContrastiveError):
        loss_ccl(Tensor(np.ones((3, 3))), Tensor(np.ones((3, 3))))


def test_masked_loss_ignores_visible_patches():
    plans, a = random_case(5)
    Ro = a["Ro"].copy()
    base = float(loss_mae(Tensor(Ro), Tensor(a["Rs"]), a["Po"], a["Ps"], plans).data)
    for b, pl in enumerate(plans):
        Ro[b, pl.visible] += 100.0
    assert float(loss_mae(Tensor(Ro), Tensor(a["Rs"]), a["Po"], a["Ps"], plans).data) == base


def test_empty_mask_raises():
    full = MaskPlan.full(16)
    plans, a = random_case(6)
    with pytest.raises(DegenerateMaskError):
        loss_mae(Tensor(a["Ro"]), Tensor(a["Rs"]), a["Po"], a["Ps"], [full] * 4)


# -- oracle equivalence ------------------------------------------------------------

@pytest.mark.parametrize("seed", range(0, 50, 7))
def test_losses_match_scalar_oracles(seed):
    plans, a = random_case(seed)
    mask = [pl.mask for pl in plans]
    v = float(loss_mae(Tensor(a["Ro"]), Tensor(a["Rs"]), a["Po"], a["Ps"], plans).data)
    assert rel(v, oracles.mae(a["Ro"], a["Rs"], a["Po"], a["Ps"], mask)) < 1e-6
    v = float(loss_cdr(Tensor(a["Rco"]), Tensor(a["Rcs"]), a["Po"], a["Ps"], plans, "grayscale", 4).data)
    assert rel(v, oracles.cdr(a["Rco"], a["Rcs"], a["Po"], a["Ps"], mask)) < 1e-6
    r = np.random.default_rng(seed + 1000)
    x, t = r.standard_normal((3, 4, 16)).astype(F32), r.standard_normal((3, 4, 16)).astype(F32)
    assert rel(float(loss_okd(t, Tensor(x)).data), oracles.okd(t, x)) < 1e-6
    zo = nc.l2_normalize(Tensor(r.standard_normal((6, 16)).astype(F32))).data
    zs = nc.l2_normalize(Tensor(r.standard_normal((6, 16)).astype(F32))).data
    assert rel(float(loss_ccl(Tensor(zo), Tensor(zs)).data), oracles.ccl(zo, zs, 0.07)) < 1e-6


# -- degradation -------------------------------------------------------------------

def test_grayscale_weights():
    k = 4
    patch = np.concatenate([np.full(k, 1.0), np.full(k, 0.0), np.full(k, 0.0)])
    np.testing.assert_allclose(degrade(patch, 3), np.full(k, 0.299))
    np.testing.assert_allclose(degrade(np.ones(3 * k), 3), np.ones(k), rtol=1e-12)


@given(st.integers(0, 10_000))
def test_degrade_modes_preserve_shape(seed):
    x = np.random.default_rng(seed).random((2, 5, 3 * 16))
    for mode in ("none-rgb", "spatial-median", "spatial-avgpool"):
        assert degrade(x, 3, mode, 4).shape == x.shape
    assert degrade(x, 3, "grayscale").shape == (2, 5, 16)


def test_avgpool_of_constant_blocks_is_identity():
    block = np.kron(np.arange(4.0).reshape(2, 2), np.ones((2, 2))).ravel()
    np.testing.assert_allclose(degrade(block, 1, "spatial-avgpool", 4), block)


def test_degrade_unknown_mode():
    with pytest.raises(ValueError):
        degrade(np.zeros(12), 3, "sepia")


# -- joint objective -----------------------------------------------------------------

def make_batch(paired, seed=0, b=2):
    r = np.random.default_rng(seed)
    m = SMALL.num_patches
    plans = [make_mask(m, 0.75, r) for _ in range(b)]
    opt = r.random((b, 3, 16, 16)).astype(F32)
    sar = r.random((b, 1, 16, 16)).astype(F32)
    ids = [f"s{i}" for i in range(b)]
    if paired:
        return Batch(True, opt, sar, plans, plans, ids, ids)
    sar_plans = [make_mask(m, 0.75, r) for _ in range(b)]
    return Batch(False, opt, sar, plans, sar_plans, ids, [f"t{i}" for i in range(b)])


def test_unpaired_batch_gates_ccl_and_cdr():
    state = init_model(SMALL, seed=0)
    teacher = frozen_random_teacher(SMALL, 1)
    bd = total_loss(make_batch(False), state, teacher, ObjectiveConfig())
    assert bd.l_ccl == 0.0 and bd.l_cdr == 0.0
    nc.backward(bd.tensor)
    gated = [t for n, t in state.named_parameters() if n.startswith(("ca_buffer", "cdr_"))]
    assert gated and all(t.grad is None or not t.grad.any() for t in gated)


def test_paired_batch_reaches_every_group():
    state = init_model(SMALL, seed=0)
    bd = total_loss(make_batch(True), state, frozen_random_teacher(SMALL, 1), ObjectiveConfig())
    assert bd.l_ccl > 0 and bd.l_cdr > 0 and bd.l_okd > 0
    nc.backward(bd.tensor)
    grads = dict(state.named_parameters())
    for prefix in ("patch_embed.proj.optical", "patch_embed.proj.sar", "encoder", "decoder", "cdr_decoder",
                   "ca_buffer", "pixel_heads.optical", "pixel_heads.sar"):
        assert any(t.grad is not None and t.grad.any() for n, t in grads.items() if n.startswith(prefix)), prefix


def test_total_is_sum_of_parts():
    state = init_model(SMALL, seed=2)
    bd = total_loss(make_batch(True, 3), state, frozen_random_teacher(SMALL, 1), ObjectiveConfig())
    assert bd.total == ((bd.l_mae + bd.l_okd) + bd.l_ccl) + bd.l_cdr


def test_flags_gate_terms():
    state = init_model(SMALL, seed=0)
    cfg = ObjectiveConfig(enable_okd=False, enable_ccl=False, enable_cdr=False)
    bd = total_loss(make_batch(True), state, frozen_random_teacher(SMALL, 1), cfg)
    assert bd.l_okd == bd.l_ccl == bd.l_cdr == 0.0 and bd.total == bd.l_mae


def test_rigid_variant_skips_ca_buffer():
    state = init_model(SMALL, seed=0)
    cfg = ObjectiveConfig(enable_cdr=False, rigid_contrastive_baseline=True)
    bd = total_loss(make_batch(True), state, None, cfg)
    nc.backward(bd.tensor)
    assert all(t.grad is None for n, t in state.named_parameters() if n.startswith("ca_buffer"))


def test_cdr_grad_reaches_encoder():
    state = init_model(SMALL, seed=0)
    cfg = ObjectiveConfig(enable_okd=False, enable_ccl=False)
    batch = make_batch(True)
    full = total_loss(batch, state, None, cfg)
    nc.backward(full.tensor)
    with_cdr = state.encoder[0].fc1.weight.grad.copy()
    state.zero_grad()
    nc.backward(total_loss(batch, state, None, ObjectiveConfig(enable_okd=False, enable_ccl=False,
                                                                enable_cdr=False)).tensor)
    assert not np.allclose(with_cdr, state.encoder[0].fc1.weight.grad)


def test_mixed_batch_rejected():
    from codemae.data import ImagePair

    r = np.random.default_rng(0)
    a = ImagePair(r.random((3, 16, 16)), r.random((1, 16, 16)), True, "d", "a")
    b = ImagePair(r.random((3, 16, 16)), None, False, "d", "b")
    with pytest.raises(BatchingError):
        Batch.from_pairs([a, b], [MaskPlan.full(16)] * 2)
