"""Transformer building blocks on top of numcore.

Parameter containers are plain dataclasses of ``Tensor`` leaves so that
``named_parameters`` can walk them generically. Token tensors are
``[..., M, D]``; any leading axes are treated as batch.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import numcore as nc
from .numcore import Tensor

MODALITY_CHANNELS = {"optical": 3, "sar": 1}


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std by resampling."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


@dataclass
class LinearParams:
    weight: Tensor
    bias: Tensor | None = None

    @classmethod
    def init(cls, rng, d_in: int, d_out: int, bias: bool = True, std: float = 0.02, dtype=np.float32):
        w = param(trunc_normal(rng, (d_in, d_out), std, dtype))
        b = param(np.zeros(d_out, dtype=dtype)) if bias else None
        return cls(w, b)


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor

    @classmethod
    def init(cls, d: int, dtype=np.float32):
        return cls(param(np.ones(d, dtype=dtype)), param(np.zeros(d, dtype=dtype)))


@dataclass
class AttentionParams:
    q: LinearParams
    k: LinearParams
    v: LinearParams
    out: LinearParams | None
    head_count: int
    head_dim: int

    def __post_init__(self):
        width = self.q.weight.shape[1]
        if self.head_count * self.head_dim != width:
            raise ValueError(f"head_count*head_dim={self.head_count * self.head_dim} != width {width}")

    @classmethod
    def init(cls, rng, d: int, heads: int, bias: bool = True, out_proj: bool = True,
             std: float = 0.02, dtype=np.float32):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        mk = lambda: LinearParams.init(rng, d, d, bias, std, dtype)  # noqa: E731
        return cls(mk(), mk(), mk(), mk() if out_proj else None, heads, d // heads)


@dataclass
class BlockParams:
    norm1: LayerNormParams
    attn: AttentionParams
    norm2: LayerNormParams
    fc1: LinearParams
    fc2: LinearParams

    @classmethod
    def init(cls, rng, d: int, heads: int, mlp_ratio: int = 4, std: float = 0.02, dtype=np.float32):
        return cls(
            LayerNormParams.init(d, dtype),
            AttentionParams.init(rng, d, heads, std=std, dtype=dtype),
            LayerNormParams.init(d, dtype),
            LinearParams.init(rng, d, mlp_ratio * d, std=std, dtype=dtype),
            LinearParams.init(rng, mlp_ratio * d, d, std=std, dtype=dtype),
        )


@dataclass
class PatchEmbedParams:
    proj: dict[str, LinearParams]
    patch_size: int
    pos: Tensor
    grid: tuple[int, int] = field(default=(0, 0))

    @classmethod
    def init(cls, rng, image_size: int, patch_size: int, d: int, bias: bool = True,
             std: float = 0.02, dtype=np.float32):
        if image_size % patch_size:
            raise ValueError(f"image size {image_size} not divisible by patch size {patch_size}")
        g = image_size // patch_size
        proj = {
            mod: LinearParams.init(rng, c * patch_size ** 2, d, bias, std, dtype)
            for mod, c in MODALITY_CHANNELS.items()
        }
        return cls(proj, patch_size, param(np.zeros((g * g, d), dtype=dtype)), (g, g))

    @property
    def num_patches(self) -> int:
        return self.pos.shape[0]


# -- parameter traversal ------------------------------------------------------

def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Depth-first (name, tensor) pairs over dataclasses, dicts and lists."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_parameters(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, dict):
        for k in sorted(obj):
            yield from named_parameters(obj[k], f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}" if prefix else str(i))


# -- functional layers ---------------------------------------------------------

def linear(x: Tensor, p: LinearParams) -> Tensor:
    y = nc.matmul(x, p.weight)
    return nc.add_trailing(y, p.bias) if p.bias is not None else y


def layer_norm(x: Tensor, p: LayerNormParams, eps: float = 1e-6) -> Tensor:
    return nc.layer_norm(x, p.gamma, p.beta, eps)


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """[..., C, H, W] -> [..., M, C*p*p], patches in row-major grid order.

    Within a patch the layout is channel-major, then row, then column.
    """
    *lead, c, h, w = images.shape
    p = patch_size
    if h % p or w % p:
        raise ValueError(f"image extents {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    x = images.reshape(*lead, c, gh, p, gw, p)
    n = len(lead)
    x = np.transpose(x, (*range(n), n + 1, n + 3, n, n + 2, n + 4))
    return x.reshape(*lead, gh * gw, c * p * p)


def unpatchify(patches: np.ndarray, patch_size: int, channels: int, grid: tuple[int, int]) -> np.ndarray:
    *lead, m, _ = patches.shape
    p, (gh, gw) = patch_size, grid
    n = len(lead)
    x = patches.reshape(*lead, gh, gw, channels, p, p)
    x = np.transpose(x, (*range(n), n + 2, n, n + 3, n + 1, n + 4))
    return x.reshape(*lead, channels, gh * p, gw * p)


def patch_embed(image, params: PatchEmbedParams, modality: str) -> Tensor:
    """Tokenize ``[..., C, H, W]`` pixels into ``[..., M, D]`` tokens."""
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    c = MODALITY_CHANNELS[modality]
    if data.shape[-3] != c:
        raise ValueError(f"{modality} image needs {c} channels, got {data.shape[-3]}")
    patches = patchify(data, params.patch_size)
    if patches.shape[-2] != params.num_patches:
        raise ValueError(f"image yields {patches.shape[-2]} patches, positional table has {params.num_patches}")
    proj = params.proj[modality]
    tokens = linear(Tensor(patches.astype(proj.weight.dtype, copy=False)), proj)
    return nc.add_trailing(tokens, params.pos)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, m, d = x.shape
    x = nc.reshape(x, (*lead, m, heads, d // heads))
    n = len(lead)
    return nc.transpose(x, (*range(n), n + 1, n, n + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, m, hd = x.shape
    n = len(lead)
    x = nc.transpose(x, (*range(n), n + 1, n, n + 2))
    return nc.reshape(x, (*lead, m, h * hd))


def attention_weights(q: Tensor, k: Tensor, scale: float) -> Tensor:
    scores = nc.matmul(q, nc.transpose(k))
    return nc.softmax(nc.mul(scores, scale), axis=-1)


def self_attention(tokens: Tensor, p: AttentionParams) -> Tensor:
    """Multi-head scaled dot-product attention, 1/sqrt(head_dim) per head.

    The residual connection belongs to the caller.
    """
    q = _split_heads(linear(tokens, p.q), p.head_count)
    k = _split_heads(linear(tokens, p.k), p.head_count)
    v = _split_heads(linear(tokens, p.v), p.head_count)
    attn = attention_weights(q, k, 1.0 / math.sqrt(p.head_dim))
    out = _merge_heads(nc.matmul(attn, v))
    return linear(out, p.out) if p.out is not None else out


def cross_attention(query_tokens: Tensor, context_tokens: Tensor, p: AttentionParams) -> Tensor:
    """x + softmax(x Wq (c Wk)^T / sqrt(D)) c Wv, single head over full width.

    The residual is part of this op.
    """
    d = query_tokens.shape[-1]
    if context_tokens.shape[-1] != d:
        raise nc.ShapeError(f"cross_attention: widths {d} and {context_tokens.shape[-1]} differ")
    if query_tokens.shape[:-2] != context_tokens.shape[:-2]:
        raise nc.ShapeError("cross_attention: batch axes differ")
    q = linear(query_tokens, p.q)
    k = linear(context_tokens, p.k)
    v = linear(context_tokens, p.v)
    attn = attention_weights(q, k, 1.0 / math.sqrt(d))
    return nc.add(query_tokens, nc.matmul(attn, v))


def mlp(x: Tensor, fc1: LinearParams, fc2: LinearParams) -> Tensor:
    return linear(nc.gelu(linear(x, fc1)), fc2)


def transformer_block(tokens: Tensor, p: BlockParams) -> Tensor:
    x = nc.add(tokens, self_attention(layer_norm(tokens, p.norm1), p.attn))
    return nc.add(x, mlp(layer_norm(x, p.norm2), p.fc1, p.fc2))


def run_blocks(tokens: Tensor, blocks: list[BlockParams]) -> Tensor:
    for b in blocks:
        tokens = transformer_block(tokens, b)
    return tokens
