"""Finite-difference checks for every op, layer, loss and the joint objective.

Each check builds random 64-bit inputs from a seed and returns the max
relative error reported by ``numcore.grad_check``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numcore as nc
from .model import MaskPlan, ModelConfig, frozen_random_teacher, init_model
from .nn import (
    AttentionParams,
    BlockParams,
    LinearParams,
    PatchEmbedParams,
    cross_attention,
    linear,
    mlp,
    patch_embed,
    self_attention,
    transformer_block,
)
from .numcore import Tensor
from .objectives import Batch, ObjectiveConfig, loss_ccl, loss_cdr, loss_mae, loss_okd, total_loss

F64 = np.float64
OP_TOL = 1e-4
MODEL_TOL = 1e-3


@dataclass
class Check:
    name: str
    group: str  # ops | layers | losses | composite
    fn: Callable[[int], float]
    tol: float = OP_TOL


@dataclass
class CheckResult:
    name: str
    group: str
    max_rel_error: float
    tol: float
    seeds: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def _t(rng, *shape, low=None) -> Tensor:
    if low is None:
        return Tensor(rng.standard_normal(shape), dtype=F64)
    return Tensor(rng.uniform(low, low + 1.5, size=shape), dtype=F64)


def _multi(build):
    """``build(rng)`` returns (inputs, f) where f() closes over the inputs."""
    def run(seed):
        rng = np.random.default_rng(seed)
        xs, f = build(rng)
        probe = {}

        def g():
            out = f()
            if "r" not in probe:
                probe["r"] = Tensor(np.random.default_rng(seed + 1).standard_normal(out.shape), dtype=F64)
            return out if out.ndim == 0 else nc.sum(nc.mul(out, probe["r"]))
        return nc.grad_check(g, xs)
    return run


def _unary(op, low=None, shape=(3, 4)):
    def build(rng):
        x = _t(rng, *shape, low=low)
        return [x], lambda: op(x)
    return _multi(build)


def _abs_input(rng):
    # keep entries away from the kink at 0
    x = rng.standard_normal((3, 4))
    return np.where(np.abs(x) < 0.1, 0.5, x)


def _op_checks() -> list[Check]:
    def binary(op, bshape=(3, 4)):
        def b(rng):
            a, c = _t(rng, 3, 4), _t(rng, *bshape)
            return [a, c], lambda: op(a, c)
        return _multi(b)

    def matmul_batched(rng):
        a, b = _t(rng, 2, 3, 4), _t(rng, 2, 4, 5)
        return [a, b], lambda: nc.matmul(a, b)

    def matmul_shared(rng):
        a, b = _t(rng, 2, 3, 4), _t(rng, 4, 5)
        return [a, b], lambda: nc.matmul(a, b)

    def concat(rng):
        a, b = _t(rng, 2, 3), _t(rng, 4, 3)
        return [a, b], lambda: nc.concat([a, b], axis=0)

    def layer_norm(rng):
        x, g, b = _t(rng, 2, 3, 6), _t(rng, 6), _t(rng, 6)
        return [x, g, b], lambda: nc.layer_norm(x, g, b)

    def take_rows(rng):
        a = _t(rng, 2, 5, 3)
        idx = np.stack([rng.permutation(5)[:3] for _ in range(2)])
        return [a], lambda: nc.take_rows(a, idx)

    def abs_op(seed):
        rng = np.random.default_rng(seed)
        x = Tensor(_abs_input(rng), dtype=F64)
        r = Tensor(rng.standard_normal((3, 4)), dtype=F64)
        return nc.grad_check(lambda t: nc.sum(nc.mul(nc.abs(t), r)), x)

    def getitem(seed):
        rng = np.random.default_rng(seed)
        x = _t(rng, 4, 5)
        r = Tensor(rng.standard_normal((2, 5)), dtype=F64)
        # repeated index exercises gradient accumulation
        return nc.grad_check(lambda t: nc.sum(nc.mul(t[np.array([1, 1])], r)), x)

    return [
        Check("add", "ops", binary(nc.add)),
        Check("sub", "ops", binary(nc.sub)),
        Check("mul", "ops", binary(nc.mul)),
        Check("add_trailing", "ops", binary(nc.add_trailing, (4,))),
        Check("mul_trailing", "ops", binary(nc.mul_trailing, (4,))),
        Check("neg", "ops", _unary(nc.neg)),
        Check("scale", "ops", _unary(lambda t: nc.mul(t, 0.37))),
        Check("square", "ops", _unary(nc.square)),
        Check("abs", "ops", abs_op),
        Check("exp", "ops", _unary(nc.exp)),
        Check("log", "ops", _unary(nc.log, low=0.5)),
        Check("gelu", "ops", _unary(nc.gelu)),
        Check("sum", "ops", _unary(lambda t: nc.sum(t, axis=1))),
        Check("sum_keepdims", "ops", _unary(lambda t: nc.sum(t, axis=0, keepdims=True))),
        Check("mean", "ops", _unary(lambda t: nc.mean(t, axis=-1))),
        Check("matmul", "ops", _multi(matmul_batched)),
        Check("matmul_shared", "ops", _multi(matmul_shared)),
        Check("transpose", "ops", _unary(nc.transpose, shape=(2, 3, 4))),
        Check("reshape", "ops", _unary(lambda t: nc.reshape(t, (4, 3)))),
        Check("getitem", "ops", getitem),
        Check("concat", "ops", _multi(concat)),
        Check("broadcast_rows", "ops", _unary(lambda t: nc.broadcast_rows(t, (2, 3, 4)), shape=(4,))),
        Check("take_rows", "ops", _multi(take_rows)),
        Check("softmax", "ops", _unary(lambda t: nc.softmax(t, axis=-1))),
        Check("softmax_axis0", "ops", _unary(lambda t: nc.softmax(t, axis=0))),
        Check("log_softmax", "ops", _unary(lambda t: nc.log_softmax(t, axis=-1))),
        Check("log_softmax_axis0", "ops", _unary(lambda t: nc.log_softmax(t, axis=0))),
        Check("layer_norm", "ops", _multi(layer_norm)),
        Check("l2_normalize", "ops", _unary(lambda t: nc.l2_normalize(t, axis=-1))),
    ]


def _params(obj) -> list[Tensor]:
    from .nn import named_parameters

    out = [t for _, t in named_parameters(obj)]
    for t in out:
        t.requires_grad = True
    return out


def _layer_checks() -> list[Check]:
    d, std = 8, 0.5

    def lin(rng):
        p = LinearParams.init(rng, 5, d, std=std, dtype=F64)
        x = _t(rng, 2, 3, 5)
        return [x, *_params(p)], lambda: linear(x, p)

    def embed(rng):
        p = PatchEmbedParams.init(rng, 8, 4, d, std=std, dtype=F64)
        p.pos.data = rng.standard_normal(p.pos.shape)
        img = rng.standard_normal((2, 1, 8, 8))
        return _params(p), lambda: patch_embed(img, p, "sar")

    def attn(rng):
        p = AttentionParams.init(rng, d, 2, std=std, dtype=F64)
        x = _t(rng, 2, 5, d)
        return [x, *_params(p)], lambda: self_attention(x, p)

    def xattn(rng):
        p = AttentionParams.init(rng, d, 1, bias=False, out_proj=False, std=std, dtype=F64)
        x, c = _t(rng, 2, 5, d), _t(rng, 2, 4, d)
        return [x, c, *_params(p)], lambda: cross_attention(x, c, p)

    def mlp_(rng):
        b = BlockParams.init(rng, d, 2, 2, std, F64)
        x = _t(rng, 3, d)
        return [x, *_params(b.fc1), *_params(b.fc2)], lambda: mlp(x, b.fc1, b.fc2)

    def block(rng):
        b = BlockParams.init(rng, d, 2, 2, std, F64)
        x = _t(rng, 2, 5, d)
        return [x, *_params(b)], lambda: transformer_block(x, b)

    return [
        Check("linear", "layers", _multi(lin)),
        Check("patch_embed", "layers", _multi(embed)),
        Check("self_attention", "layers", _multi(attn)),
        Check("cross_attention", "layers", _multi(xattn)),
        Check("mlp", "layers", _multi(mlp_)),
        Check("transformer_block", "layers", _multi(block)),
    ]


def _plans(rng, b: int, m: int, n_masked: int) -> list[MaskPlan]:
    out = []
    for _ in range(b):
        order = rng.permutation(m)
        mask = np.zeros(m, dtype=np.int8)
        mask[order[m - n_masked:]] = 1
        out.append(MaskPlan(mask, n_masked / m, order[:m - n_masked], order[m - n_masked:]))
    return out


def _loss_checks() -> list[Check]:
    b, m, p = 2, 8, 2

    def mae(rng):
        plans = _plans(rng, b, m, 6)
        r_o, r_s = _t(rng, b, m, 3 * p * p), _t(rng, b, m, p * p)
        t_o, t_s = rng.standard_normal(r_o.shape), rng.standard_normal(r_s.shape)
        return [r_o, r_s], lambda: loss_mae(r_o, r_s, t_o, t_s, plans)

    def okd(rng):
        x = _t(rng, b, 3, 6)
        t = x.data + np.where(rng.random(x.shape) < 0.5, -1, 1) * rng.uniform(0.2, 1.0, x.shape)
        return [x], lambda: loss_okd(t, x)

    def ccl(rng):
        a, c = _t(rng, 4, 6), _t(rng, 4, 6)
        return [a, c], lambda: loss_ccl(nc.l2_normalize(a), nc.l2_normalize(c), 0.07)

    def cdr(rng):
        plans = _plans(rng, b, m, 6)
        r_o, r_s = _t(rng, b, m, p * p), _t(rng, b, m, p * p)
        po, ps = rng.standard_normal((b, m, 3 * p * p)), rng.standard_normal((b, m, p * p))
        return [r_o, r_s], lambda: loss_cdr(r_o, r_s, po, ps, plans, "grayscale", p)

    return [
        Check("loss_mae", "losses", _multi(mae)),
        Check("loss_okd", "losses", _multi(okd)),
        Check("loss_ccl", "losses", _multi(ccl)),
        Check("loss_cdr", "losses", _multi(cdr)),
    ]


TINY = ModelConfig(image_size=8, patch_size=4, dim=8, heads=2, enc_depth=1, dec_depth=1, cdr_depth=1,
                   dec_dim=8, dec_heads=2, mlp_ratio=2, init_std=0.3)


def composite_case(seed: int, config: ModelConfig = TINY):
    """A 2-pair paired batch, a 64-bit model and a 64-bit frozen teacher."""
    rng = np.random.default_rng(seed)
    state = init_model(config, seed=seed, dtype=F64)
    for name, t in state.named_parameters():
        if t.ndim == 1 or name.endswith("pos"):
            # give biases, norms and positional tables nonzero values
            t.data = t.data + 0.1 * rng.standard_normal(t.shape)
    teacher = frozen_random_teacher(config, seed + 100, dtype=F64)
    s = config.image_size
    plans = _plans(rng, 2, config.num_patches, 3)
    batch = Batch(True, rng.random((2, 3, s, s)), rng.random((2, 1, s, s)), plans, plans, ["a", "b"], ["a", "b"])
    return state, teacher, batch


def _composite(seed: int, coords: int = 3) -> float:
    state, teacher, batch = composite_case(seed)
    cfg = ObjectiveConfig()
    params = state.parameters()
    return nc.grad_check(lambda: total_loss(batch, state, teacher, cfg).tensor, params, max_coords=coords, seed=seed)


COMPOSITE = Check("total_loss", "composite", _composite, MODEL_TOL)


def all_checks() -> list[Check]:
    return [*_op_checks(), *_layer_checks(), *_loss_checks(), COMPOSITE]


COMPONENTS = {
    "all": ("ops", "layers", "losses", "composite"),
    "layers": ("ops", "layers"),
    "losses": ("losses", "composite"),
}


def run_suite(component: str = "all", seeds: int = 20) -> list[CheckResult]:
    if component not in COMPONENTS:
        raise ValueError(f"unknown component {component!r}; choose from {sorted(COMPONENTS)}")
    groups = COMPONENTS[component]
    results = []
    for chk in all_checks():
        if chk.group not in groups:
            continue
        t0 = time.perf_counter()
        worst = max(chk.fn(s) for s in range(seeds))
        results.append(CheckResult(chk.name, chk.group, worst, chk.tol, seeds, time.perf_counter() - t0))
    return results
