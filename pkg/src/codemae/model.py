"""Model assembly: tokenizers, shared encoder and decoders, CA buffer, teacher."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .container import FeatureFile
from .nn import (
    MODALITY_CHANNELS,
    AttentionParams,
    BlockParams,
    LinearParams,
    PatchEmbedParams,
    cross_attention,
    linear,
    named_parameters,
    patch_embed,
    run_blocks,
    trunc_normal,
)
from .numcore import Tensor


@dataclass
class ModelConfig:
    image_size: int = 64
    patch_size: int = 8
    dim: int = 64
    heads: int = 4
    enc_depth: int = 4
    dec_depth: int = 8
    cdr_depth: int = 8
    dec_dim: int = 64
    dec_heads: int = 4
    mlp_ratio: int = 4
    cdr_channels: int = 1
    init_std: float = 0.02

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    def validate(self) -> None:
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.dim % self.heads or self.dec_dim % self.dec_heads:
            raise ValueError("widths must be divisible by head counts")
        if self.cdr_channels not in (1, 3):
            raise ValueError("cdr_channels must be 1 or 3")


@dataclass
class MaskPlan:
    """Per-patch visibility shared by both modalities of a pair.

    ``mask[i] == 1`` marks patch i as masked. ``visible`` keeps the shuffled
    order the encoder sees; ``restore`` maps [visible, masked] back to grid order.
    """

    mask: np.ndarray
    ratio: float
    visible: np.ndarray
    masked: np.ndarray

    @property
    def num_patches(self) -> int:
        return self.mask.shape[0]

    @property
    def num_visible(self) -> int:
        return self.visible.shape[0]

    @property
    def num_masked(self) -> int:
        return self.masked.shape[0]

    @property
    def restore(self) -> np.ndarray:
        return np.argsort(np.concatenate([self.visible, self.masked]), kind="stable")

    @classmethod
    def full(cls, m: int) -> "MaskPlan":
        """Ratio-0 plan: every patch visible, in grid order."""
        return cls(np.zeros(m, dtype=np.int8), 0.0, np.arange(m), np.zeros(0, dtype=np.intp))


@dataclass
class ModelState:
    config: ModelConfig
    patch_embed: PatchEmbedParams
    encoder: list[BlockParams]
    dec_adapter: LinearParams
    mask_token: Tensor
    dec_pos: Tensor
    decoder: list[BlockParams]
    pixel_heads: dict[str, LinearParams]
    cdr_adapter: LinearParams
    cdr_mask_token: Tensor
    cdr_pos: Tensor
    cdr_decoder: list[BlockParams]
    cdr_head: LinearParams
    ca_buffer: AttentionParams

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in named_parameters(self) if n != "config"]

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def astype(self, dtype) -> "ModelState":
        clone = copy.deepcopy(self)
        for t in clone.parameters():
            t.data = t.data.astype(dtype)
            t.grad = None
        return clone

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.named_parameters()}

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(tensors)
        extra = set(tensors) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, t in own.items():
            if tensors[name].shape != t.shape:
                raise ValueError(f"{name}: shape {tensors[name].shape} != {t.shape}")
            t.data = np.array(tensors[name], dtype=t.dtype)


def init_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelState:
    config.validate()
    rng = np.random.default_rng(seed)
    std = config.init_std
    d, dd, m, p = config.dim, config.dec_dim, config.num_patches, config.patch_size
    blocks = lambda n, w, h: [BlockParams.init(rng, w, h, config.mlp_ratio, std, dtype) for _ in range(n)]  # noqa: E731
    zeros = lambda *s: nc.Tensor(np.zeros(s, dtype=dtype), requires_grad=True)  # noqa: E731
    return ModelState(
        config=config,
        patch_embed=PatchEmbedParams.init(rng, config.image_size, p, d, std=std, dtype=dtype),
        encoder=blocks(config.enc_depth, d, config.heads),
        dec_adapter=LinearParams.init(rng, d, dd, std=std, dtype=dtype),
        mask_token=nc.Tensor(trunc_normal(rng, (dd,), std, dtype), requires_grad=True),
        dec_pos=zeros(m, dd),
        decoder=blocks(config.dec_depth, dd, config.dec_heads),
        pixel_heads={mod: LinearParams.init(rng, dd, c * p * p, std=std, dtype=dtype)
                     for mod, c in MODALITY_CHANNELS.items()},
        cdr_adapter=LinearParams.init(rng, d, dd, std=std, dtype=dtype),
        cdr_mask_token=nc.Tensor(trunc_normal(rng, (dd,), std, dtype), requires_grad=True),
        cdr_pos=zeros(m, dd),
        cdr_decoder=blocks(config.cdr_depth, dd, config.dec_heads),
        cdr_head=LinearParams.init(rng, dd, config.cdr_channels * p * p, std=std, dtype=dtype),
        ca_buffer=AttentionParams.init(rng, d, 1, bias=False, out_proj=False, std=std, dtype=dtype),
    )


# -- plan helpers --------------------------------------------------------------

def _as_plans(plans, batch: int) -> list[MaskPlan]:
    if isinstance(plans, MaskPlan):
        return [plans] * batch
    plans = list(plans)
    if len(plans) != batch:
        raise ValueError(f"{len(plans)} mask plans for a batch of {batch}")
    return plans


def stack_plans(plans: list[MaskPlan]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(visible idx [B, M_vis], restore idx [B, M], mask [B, M])."""
    counts = {p.num_visible for p in plans}
    if len(counts) != 1:
        raise ValueError("mask plans in one batch must have equal visible counts")
    return (np.stack([p.visible for p in plans]),
            np.stack([p.restore for p in plans]),
            np.stack([p.mask for p in plans]))


# -- forward paths ---------------------------------------------------------------

def tokenize(state: ModelState, images: np.ndarray, modality: str) -> Tensor:
    return patch_embed(images, state.patch_embed, modality)


def encode_tokens(state: ModelState, tokens: Tensor, visible: np.ndarray) -> Tensor:
    if tokens.shape[-2] != state.config.num_patches:
        raise ValueError(f"{tokens.shape[-2]} tokens but the model expects {state.config.num_patches}")
    if visible.max(initial=-1) >= tokens.shape[-2]:
        raise ValueError("mask plan indexes past the token grid")
    return run_blocks(nc.take_rows(tokens, visible), state.encoder)


def encode_visible(state: ModelState, images: np.ndarray, modality: str, plans) -> Tensor:
    """Tokenize, keep visible patches in plan order, run the shared encoder.

    ``images`` is ``[C, H, W]`` (returns ``[M_vis, D]``) or ``[B, C, H, W]``.
    """
    images = np.asarray(images)
    single = images.ndim == 3
    if single:
        images = images[None]
    plans = _as_plans(plans, images.shape[0])
    for p in plans:
        if p.num_patches != state.config.num_patches:
            raise ValueError(f"mask plan covers {p.num_patches} patches, model has {state.config.num_patches}")
    visible, _, _ = stack_plans(plans)
    out = encode_tokens(state, tokenize(state, images, modality), visible)
    return out[0] if single else out


def _decoder_hidden(x: Tensor, restore: np.ndarray, adapter: LinearParams, mask_token: Tensor,
                    pos: Tensor, blocks: list[BlockParams]) -> Tensor:
    b, m_vis, _ = x.shape
    m = restore.shape[1]
    h = linear(x, adapter)
    if m > m_vis:
        fill = nc.broadcast_rows(mask_token, (b, m - m_vis, mask_token.shape[0]))
        h = nc.concat([h, fill], axis=1)
    h = nc.take_rows(h, restore)
    return run_blocks(nc.add_trailing(h, pos), blocks)


def _batched(x: Tensor, plans):
    single = x.ndim == 2
    if single:
        x = nc.reshape(x, (1, *x.shape))
    plans = _as_plans(plans, x.shape[0])
    return x, plans, single


def decode_hidden(state: ModelState, x: Tensor, plans) -> Tensor:
    x, plans, single = _batched(x, plans)
    _, restore, _ = stack_plans(plans)
    h = _decoder_hidden(x, restore, state.dec_adapter, state.mask_token, state.dec_pos, state.decoder)
    return h[0] if single else h


def decode_reconstruct(state: ModelState, x: Tensor, plans, modality: str) -> Tensor:
    """Per-patch pixel predictions [.., M, C*p*p] through the shared decoder."""
    return linear(decode_hidden(state, x, plans), state.pixel_heads[modality])


def cdr_hidden(state: ModelState, x: Tensor, plans) -> Tensor:
    x, plans, single = _batched(x, plans)
    _, restore, _ = stack_plans(plans)
    h = _decoder_hidden(x, restore, state.cdr_adapter, state.cdr_mask_token, state.cdr_pos, state.cdr_decoder)
    return h[0] if single else h


def decode_cdr(state: ModelState, x: Tensor, plans) -> Tensor:
    """Single-head CDR predictions [.., M, cdr_channels*p*p] for either source modality."""
    return linear(cdr_hidden(state, x, plans), state.cdr_head)


def condition(state: ModelState, x_o: Tensor, x_s: Tensor) -> tuple[Tensor, Tensor]:
    """Cross-condition each modality on the other through the shared CA buffer."""
    return cross_attention(x_o, x_s, state.ca_buffer), cross_attention(x_s, x_o, state.ca_buffer)


def global_pool(tokens: Tensor) -> Tensor:
    """Token mean followed by l2 normalization: [.., M', D] -> [.., D]."""
    if tokens.shape[-2] < 1:
        raise ValueError("global_pool needs at least one token")
    return nc.l2_normalize(nc.mean(tokens, axis=-2), axis=-1)


# -- teacher ---------------------------------------------------------------------

@dataclass
class TeacherHandle:
    """Frozen feature source for optical distillation.

    ``kind`` is ``"frozen-random"`` (a seeded student-architecture encoder) or
    ``"feature-file"`` (precomputed per-sample [M, D_t] features).
    """

    kind: str
    width: int
    embed: PatchEmbedParams | None = None
    blocks: list[BlockParams] = field(default_factory=list)
    features: FeatureFile | None = None
    adapter: LinearParams | None = None

    def parameters(self) -> list[Tensor]:
        return [t for _, t in named_parameters(self)]


def _freeze(obj) -> None:
    for _, t in named_parameters(obj):
        t.requires_grad = False


def _frozen_adapter(rng, d_t: int, d: int, std: float, dtype) -> LinearParams | None:
    if d_t == d:
        return None
    a = LinearParams.init(rng, d_t, d, bias=False, std=1.0 / np.sqrt(d_t), dtype=dtype)
    _freeze(a)
    return a


def frozen_random_teacher(config: ModelConfig, seed: int, width: int | None = None,
                          dtype=np.float32) -> TeacherHandle:
    width = width or config.dim
    rng = np.random.default_rng(seed)
    embed = PatchEmbedParams.init(rng, config.image_size, config.patch_size, width, std=config.init_std, dtype=dtype)
    heads = config.heads if width % config.heads == 0 else 1
    blocks = [BlockParams.init(rng, width, heads, config.mlp_ratio, config.init_std, dtype)
              for _ in range(config.enc_depth)]
    handle = TeacherHandle("frozen-random", width, embed=embed, blocks=blocks,
                           adapter=_frozen_adapter(rng, width, config.dim, config.init_std, dtype))
    _freeze(handle)
    return handle


def feature_file_teacher(path, config: ModelConfig, seed: int = 0, dtype=np.float32) -> TeacherHandle:
    ff = FeatureFile.open(path)
    if ff.num_patches != config.num_patches:
        raise ValueError(f"feature file has M={ff.num_patches}, model expects {config.num_patches}")
    rng = np.random.default_rng(seed)
    return TeacherHandle("feature-file", ff.width, features=ff,
                         adapter=_frozen_adapter(rng, ff.width, config.dim, config.init_std, dtype))


def teacher_tokens(handle: TeacherHandle, optical: np.ndarray, sample_ids=None) -> np.ndarray:
    """Full-grid teacher features [B, M, D_t] (no gradient tracking)."""
    if handle.kind == "frozen-random":
        tokens = patch_embed(optical, handle.embed, "optical")
        return run_blocks(tokens, handle.blocks).data
    if handle.kind == "feature-file":
        if sample_ids is None:
            raise ValueError("feature-file teacher needs sample ids")
        return np.stack([handle.features.read(str(s)) for s in sample_ids])
    raise ValueError(f"unknown teacher kind {handle.kind!r}")


def teacher_features(optical: np.ndarray, plans, handle: TeacherHandle, sample_ids=None) -> Tensor:
    """Teacher tokens at each plan's visible indices, through the frozen adapter."""
    optical = np.asarray(optical)
    single = optical.ndim == 3
    if single:
        optical = optical[None]
        sample_ids = None if sample_ids is None else [sample_ids] if isinstance(sample_ids, str) else sample_ids
    plans = _as_plans(plans, optical.shape[0])
    visible, _, _ = stack_plans(plans)
    full = teacher_tokens(handle, optical, sample_ids)
    rows = np.take_along_axis(full, visible[..., None], axis=1)
    if handle.adapter is not None:
        rows = rows.astype(handle.adapter.weight.dtype) @ handle.adapter.weight.data
    out = Tensor(rows)
    return out[0] if single else out
