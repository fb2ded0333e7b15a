"""Loss terms, target degradation and the joint objective.

Prediction/target tensors are ``[B, M, K]`` (or ``[M, K]`` for a single
sample) with one row per patch; masks come from ``MaskPlan``. Batch
reduction is a mean over samples of the per-sample losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import median_filter

from . import numcore as nc
from .model import (
    MaskPlan,
    ModelState,
    TeacherHandle,
    condition,
    decode_cdr,
    decode_hidden,
    encode_tokens,
    global_pool,
    stack_plans,
    teacher_features,
    tokenize,
)
from .nn import linear, patchify
from .numcore import Tensor

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
DEGRADATION_MODES = ("grayscale", "none-rgb", "spatial-median", "spatial-avgpool")


class DegenerateMaskError(ValueError):
    """The mask leaves no patch to score."""


class ContrastiveError(ValueError):
    """Contrastive inputs violate the loss contract."""


class BatchingError(ValueError):
    """A batch mixes paired and unpaired samples."""


@dataclass
class ObjectiveConfig:
    tau: float = 0.07
    enable_okd: bool = True
    enable_ccl: bool = True
    enable_cdr: bool = True
    rigid_contrastive_baseline: bool = False
    degradation: str = "grayscale"
    sum_patch_error: bool = False
    sum_contrastive: bool = False


@dataclass
class LossBreakdown:
    """Per-step loss parts; ``total`` is their in-order sum in the model dtype."""

    l_mae: np.floating
    l_okd: np.floating
    l_ccl: np.floating
    l_cdr: np.floating
    total: np.floating
    paired: bool
    tensor: Tensor | None = field(default=None, repr=False, compare=False)


# -- helpers -----------------------------------------------------------------

def _batched(t: Tensor) -> Tensor:
    return nc.reshape(t, (1, *t.shape)) if t.ndim == 2 else t


def _mask_matrix(plans, batch: int) -> np.ndarray:
    if isinstance(plans, MaskPlan):
        plans = [plans] * batch
    return stack_plans(list(plans))[2]


def _masked_patch_error(pred: Tensor, target: np.ndarray, mask: np.ndarray, per_element: bool) -> Tensor:
    """Mean over samples of (sum over masked patches of patch error) / M_inv."""
    pred = _batched(pred)
    target = np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
    m_inv = mask.sum(axis=1)
    if (m_inv == 0).any():
        raise DegenerateMaskError("masked loss needs at least one masked patch per sample")
    sq = nc.square(nc.sub(pred, Tensor(target)))
    per_patch = nc.mean(sq, axis=-1) if per_element else nc.sum(sq, axis=-1)
    weights = (mask / m_inv[:, None]).astype(pred.dtype) / mask.shape[0]
    return nc.sum(nc.mul(per_patch, Tensor(weights)))


# -- Eq. terms -----------------------------------------------------------------

def loss_mae(R_o: Tensor, R_s: Tensor, P_o, P_s, plan, literal_norm: bool = False) -> Tensor:
    """Masked-patch reconstruction error summed over both modalities.

    Per-patch squared error is averaged over the patch's elements unless
    ``literal_norm`` asks for the plain squared norm.
    """
    b = _batched(R_o).shape[0]
    mask = _mask_matrix(plan, b)
    return nc.add(_masked_patch_error(R_o, P_o, mask, not literal_norm),
                  _masked_patch_error(R_s, P_s, mask, not literal_norm))


def loss_mae_single(R: Tensor, P, plan, literal_norm: bool = False) -> Tensor:
    mask = _mask_matrix(plan, _batched(R).shape[0])
    return _masked_patch_error(R, P, mask, not literal_norm)


def loss_okd(teacher_tokens, x_o: Tensor) -> Tensor:
    """Mean over visible tokens of the l1 distance to the teacher token."""
    t = teacher_tokens.data if isinstance(teacher_tokens, Tensor) else np.asarray(teacher_tokens)
    if t.shape != x_o.shape:
        raise nc.ShapeError(f"teacher tokens {t.shape} do not match student tokens {x_o.shape}")
    if x_o.shape[-2] < 1:
        raise DegenerateMaskError("distillation needs at least one visible token")
    x = _batched(x_o)
    diff = nc.abs(nc.sub(x, Tensor(t.reshape(x.shape).astype(x.dtype, copy=False))))
    return nc.mean(nc.sum(diff, axis=-1))


def loss_ccl(pooled_o: Tensor, pooled_s: Tensor, tau: float = 0.07, literal_sum: bool = False) -> Tensor:
    """Symmetric InfoNCE between l2-normalized embeddings [N, D].

    Each direction is a mean over the N rows unless ``literal_sum``.
    """
    if pooled_o.shape != pooled_s.shape or pooled_o.ndim != 2:
        raise ContrastiveError(f"need matching [N, D] inputs, got {pooled_o.shape} and {pooled_s.shape}")
    n = pooled_o.shape[0]
    if n < 2:
        raise ContrastiveError("contrastive loss needs N >= 2")
    for name, t in (("optical", pooled_o), ("sar", pooled_s)):
        norms = np.linalg.norm(t.data.astype(np.float64), axis=1)
        if np.abs(norms - 1.0).max() > 1e-3:
            raise ContrastiveError(f"{name} embeddings are not unit-norm (max deviation {np.abs(norms - 1).max():.3g})")
    eye = Tensor(np.eye(n, dtype=pooled_o.dtype))
    logits = nc.mul(nc.matmul(pooled_s, nc.transpose(pooled_o)), 1.0 / tau)
    s_to_o = nc.sum(nc.mul(nc.log_softmax(logits, axis=1), eye))
    o_to_s = nc.sum(nc.mul(nc.log_softmax(logits, axis=0), eye))
    scale = -0.5 if literal_sum else -0.5 / n
    return nc.mul(nc.add(s_to_o, o_to_s), scale)


def degrade(patch_pixels, channels: int, mode: str = "grayscale", patch_size: int | None = None) -> np.ndarray:
    """Degrade per-patch pixels [..., C*p*p] (channel-major within a patch)."""
    x = np.asarray(patch_pixels.data if isinstance(patch_pixels, Tensor) else patch_pixels)
    if channels not in (1, 3):
        raise ValueError(f"unsupported channel count {channels}")
    if mode not in DEGRADATION_MODES:
        raise ValueError(f"unknown degradation mode {mode!r}")
    k = x.shape[-1] // channels
    if k * channels != x.shape[-1]:
        raise ValueError(f"last axis {x.shape[-1]} not divisible by {channels} channels")
    if mode == "grayscale":
        if channels == 1:
            return x.copy()
        w = np.asarray(LUMA_WEIGHTS, dtype=x.dtype)
        return np.einsum("...ck,c->...k", x.reshape(*x.shape[:-1], 3, k), w)
    if mode == "none-rgb":
        return x.copy()
    p = patch_size or int(round(np.sqrt(k)))
    if p * p != k:
        raise ValueError(f"patch of {k} pixels is not square")
    img = x.reshape(*x.shape[:-1], channels, p, p)
    if mode == "spatial-median":
        size = (1,) * (img.ndim - 2) + (3, 3)
        out = median_filter(img, size=size, mode="nearest")
    else:
        if p % 2:
            raise ValueError("avg-pool degradation needs an even patch size")
        pooled = img.reshape(*img.shape[:-2], p // 2, 2, p // 2, 2).mean(axis=(-3, -1))
        out = pooled.repeat(2, axis=-2).repeat(2, axis=-1)
    return out.reshape(x.shape).astype(x.dtype, copy=False)


def cdr_target(patches: np.ndarray, channels: int, mode: str, out_channels: int, patch_size: int | None = None):
    """Degraded counterpart target, channel-tiled to the CDR head width."""
    t = degrade(patches, channels, mode, patch_size)
    c = t.shape[-1] // (patches.shape[-1] // channels)
    if c == out_channels:
        return t
    if c == 1:
        return np.concatenate([t] * out_channels, axis=-1)
    raise ValueError(f"target has {c} channels, CDR head predicts {out_channels}")


def loss_cdr(Rcdr_o: Tensor, Rcdr_s: Tensor, P_o, P_s, plan, mode: str = "grayscale",
             patch_size: int | None = None, literal_norm: bool = False) -> Tensor:
    """Each branch's CDR prediction vs the degraded counterpart's masked patches."""
    b = _batched(Rcdr_o).shape[0]
    mask = _mask_matrix(plan, b)
    out_c = Rcdr_o.shape[-1] // (np.asarray(P_s).shape[-1])
    t_for_o = cdr_target(np.asarray(P_s), 1, mode, out_c, patch_size)
    t_for_s = cdr_target(np.asarray(P_o), 3, mode, out_c, patch_size)
    return nc.add(_masked_patch_error(Rcdr_o, t_for_o, mask, not literal_norm),
                  _masked_patch_error(Rcdr_s, t_for_s, mask, not literal_norm))


# -- joint objective ------------------------------------------------------------

@dataclass
class Batch:
    """A homogeneous training batch.

    Paired: ``optical[i]`` and ``sar[i]`` are one scene, sharing ``plans[i]``.
    Unpaired: optical and SAR rows are unrelated and carry their own plans.
    """

    paired: bool
    optical: np.ndarray | None
    sar: np.ndarray | None
    optical_plans: list[MaskPlan]
    sar_plans: list[MaskPlan]
    optical_ids: list[str] = field(default_factory=list)
    sar_ids: list[str] = field(default_factory=list)

    @classmethod
    def from_pairs(cls, pairs, plans: list[MaskPlan]) -> "Batch":
        """Build a batch from ImagePair-like records (see ``data.ImagePair``)."""
        flags = {bool(p.paired) for p in pairs}
        if len(flags) != 1:
            raise BatchingError("batch mixes paired and unpaired samples")
        paired = flags.pop()
        if paired:
            return cls(True, np.stack([p.optical for p in pairs]), np.stack([p.sar for p in pairs]),
                       list(plans), list(plans), [p.sample_id for p in pairs], [p.sample_id for p in pairs])
        opt = [(p, m) for p, m in zip(pairs, plans) if p.optical is not None]
        sar = [(p, m) for p, m in zip(pairs, plans) if p.sar is not None]
        return cls(
            False,
            np.stack([p.optical for p, _ in opt]) if opt else None,
            np.stack([p.sar for p, _ in sar]) if sar else None,
            [m for _, m in opt], [m for _, m in sar],
            [p.sample_id for p, _ in opt], [p.sample_id for p, _ in sar],
        )


def _zero(dtype) -> Tensor:
    return Tensor(np.zeros((), dtype=dtype))


def total_loss(batch: Batch, state: ModelState, teacher: TeacherHandle | None, cfg: ObjectiveConfig) -> LossBreakdown:
    """Full forward; returns the four parts and their differentiable sum.

    Unpaired batches skip the contrastive and cross-modal branches entirely,
    so those parts are exact zeros and their parameters get no gradient.
    """
    dtype = state.patch_embed.pos.dtype
    p = state.config.patch_size
    has_o, has_s = batch.optical is not None, batch.sar is not None
    if batch.paired and not (has_o and has_s):
        raise BatchingError("paired batch needs both modalities")
    if batch.paired and len(batch.optical) != len(batch.sar):
        raise BatchingError("paired batch has unequal modality counts")

    # shared encoder and decoders run once over both modalities stacked on the batch axis
    token_sets, plan_sets = [], []
    if has_o:
        token_sets.append(tokenize(state, batch.optical.astype(dtype, copy=False), "optical"))
        plan_sets.append(list(batch.optical_plans))
    if has_s:
        token_sets.append(tokenize(state, batch.sar.astype(dtype, copy=False), "sar"))
        plan_sets.append(list(batch.sar_plans))
    n_o = len(batch.optical) if has_o else 0
    all_plans = [pl for ps in plan_sets for pl in ps]
    tokens = token_sets[0] if len(token_sets) == 1 else nc.concat(token_sets, axis=0)
    x = encode_tokens(state, tokens, stack_plans(all_plans)[0])
    x_o = x[:n_o] if has_o else None
    x_s = x[n_o:] if has_s else None

    P_o = patchify(batch.optical, p) if has_o else None
    P_s = patchify(batch.sar, p) if has_s else None

    hidden = decode_hidden(state, x, all_plans)
    l_mae = _zero(dtype)
    if has_o:
        R_o = linear(hidden[:n_o], state.pixel_heads["optical"])
        l_mae = nc.add(l_mae, loss_mae_single(R_o, P_o, batch.optical_plans, cfg.sum_patch_error))
    if has_s:
        R_s = linear(hidden[n_o:], state.pixel_heads["sar"])
        l_mae = nc.add(l_mae, loss_mae_single(R_s, P_s, batch.sar_plans, cfg.sum_patch_error))

    l_okd = _zero(dtype)
    if cfg.enable_okd and has_o and teacher is not None:
        t = teacher_features(batch.optical.astype(dtype, copy=False), batch.optical_plans, teacher, batch.optical_ids)
        l_okd = loss_okd(t, x_o)

    l_ccl = _zero(dtype)
    l_cdr = _zero(dtype)
    if batch.paired:
        if cfg.enable_ccl:
            if cfg.rigid_contrastive_baseline:
                g_o, g_s = global_pool(x_o), global_pool(x_s)
            else:
                xo_cd, xs_cd = condition(state, x_o, x_s)
                g_o, g_s = global_pool(xo_cd), global_pool(xs_cd)
            l_ccl = loss_ccl(g_o, g_s, cfg.tau, cfg.sum_contrastive)
        if cfg.enable_cdr:
            plans = batch.optical_plans
            r = decode_cdr(state, x, all_plans)
            r_o, r_s = r[:n_o], r[n_o:]
            l_cdr = loss_cdr(r_o, r_s, P_o, P_s, plans, cfg.degradation, p, cfg.sum_patch_error)

    total = nc.add(nc.add(nc.add(l_mae, l_okd), l_ccl), l_cdr)
    parts = [np.asarray(t.data, dtype=dtype)[()] for t in (l_mae, l_okd, l_ccl, l_cdr, total)]
    return LossBreakdown(*parts, paired=batch.paired, tensor=total)
