"""Representation and heterogeneity diagnostics.

Spectra and effective rank, SSIM with Gaussian pyramids, patch-level
alignment against input heterogeneity, PCA projection and linear probing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.stats import spearmanr

from .data import ImagePair, luminance
from .model import MaskPlan, ModelState, encode_visible, global_pool


@dataclass
class SpectrumReport:
    values: np.ndarray  # descending, values[0] == 1
    effective_rank: float
    count: int
    width: int
    label: str = ""


@dataclass
class AlignmentPoint:
    ssim: float
    cosine: float
    patch_index: int
    sample_id: str


# -- spectra -----------------------------------------------------------------

def effective_rank(spectrum) -> float:
    """exp of the Shannon entropy of sigma / sum(sigma)."""
    s = np.asarray(spectrum, dtype=np.float64)
    s = s[s > 0]
    if s.size == 0:
        raise ValueError("effective rank needs at least one positive value")
    p = s / s.sum()
    return float(np.exp(-(p * np.log(p)).sum()))


def singular_spectrum(embeddings, label: str = "") -> SpectrumReport:
    """Normalized singular values of the row-centered [n, D] matrix (64-bit)."""
    x = np.asarray(getattr(embeddings, "data", embeddings), dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need an [n >= 2, D] matrix, got {x.shape}")
    xc = x - x.mean(axis=0, keepdims=True)
    sv = np.linalg.svd(xc, compute_uv=False)
    k = min(x.shape)
    sv = np.sort(sv)[::-1][:k]
    top = sv[0] if sv.size else 0.0
    if top <= np.finfo(np.float64).tiny or top <= 1e-12 * max(1.0, np.abs(x).max()):
        values = np.zeros(k)
        values[0] = 1.0
        return SpectrumReport(values, 1.0, x.shape[0], x.shape[1], label)
    values = sv / top
    return SpectrumReport(values, effective_rank(values), x.shape[0], x.shape[1], label)


# -- SSIM and pyramids --------------------------------------------------------------

def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(a, b, window_sigma: float = 1.5, L: float = 1.0, size: int = 11) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"ssim needs equal 2-D shapes, got {a.shape} and {b.shape}")
    w = gaussian_window(size, window_sigma)
    filt = lambda x: ndimage.correlate(x, w, mode="reflect")  # noqa: E731
    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a ** 2
    sbb = filt(b * b) - mu_b ** 2
    sab = filt(a * b) - mu_a * mu_b
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    return ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))


def ssim(a, b, window_sigma: float = 1.5, L: float = 1.0) -> float:
    """Mean local SSIM, 11x11 Gaussian window, reflect-padded borders."""
    return float(ssim_map(a, b, window_sigma, L).mean())


_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def pyr_down(img: np.ndarray) -> np.ndarray:
    blurred = ndimage.correlate1d(img, _BINOMIAL5, axis=-1, mode="reflect")
    blurred = ndimage.correlate1d(blurred, _BINOMIAL5, axis=-2, mode="reflect")
    return blurred[..., ::2, ::2]


def gaussian_pyramid(img, levels: int) -> list[np.ndarray]:
    """[img, down(img), ...] with ``levels`` entries; level 1 is the input."""
    img = np.asarray(img, dtype=np.float64)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    f = 2 ** (levels - 1)
    if img.shape[-1] % f or img.shape[-2] % f:
        raise ValueError(f"extents {img.shape[-2:]} not divisible by {f}")
    out = [img]
    for _ in range(levels - 1):
        out.append(pyr_down(out[-1]))
    return out


def pair_pyramid_ssim(pair: ImagePair, levels: int) -> list[float]:
    opt = luminance(np.asarray(pair.optical, dtype=np.float64))
    sar = np.asarray(pair.sar, dtype=np.float64)[0]
    return [ssim(a, b) for a, b in zip(gaussian_pyramid(opt, levels), gaussian_pyramid(sar, levels))]


def heterogeneity_curve(pairs, levels: int = 4, gsd: float = 1.0) -> list[dict]:
    """Per pyramid level: equivalent GSD, mean and std of optical-luminance/SAR SSIM."""
    per_pair = np.array([pair_pyramid_ssim(p, levels) for p in pairs])
    return [
        {"level": lvl, "scale": gsd * 2 ** lvl,
         "mean_ssim": float(per_pair[:, lvl].mean()), "std_ssim": float(per_pair[:, lvl].std())}
        for lvl in range(levels)
    ]


# -- alignment --------------------------------------------------------------------------

def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    return np.clip((a * b).sum(-1) / np.maximum(na * nb, 1e-12), -1.0, 1.0)


def alignment_vs_heterogeneity(pairs, state: ModelState, prepare=None) -> list[AlignmentPoint]:
    """Per patch: SSIM of optical luminance vs SAR, and cosine of the two encoder tokens.

    SSIM uses the raw [0, 1] images; ``prepare(image, pair, modality)``, when
    given, maps them to encoder inputs (e.g. dataset normalization).
    """
    p = state.config.patch_size
    plan = MaskPlan.full(state.config.num_patches)
    dtype = state.patch_embed.pos.dtype
    prep = prepare or (lambda img, pair, mod: img)
    points = []
    for pair in pairs:
        xo = encode_visible(state, prep(pair.optical, pair, "optical").astype(dtype), "optical", plan)
        xs = encode_visible(state, prep(pair.sar, pair, "sar").astype(dtype), "sar", plan)
        xo, xs = xo.data.astype(np.float64), xs.data.astype(np.float64)
        cos = _cosine(xo, xs)
        lum = luminance(np.asarray(pair.optical, dtype=np.float64))
        sar = np.asarray(pair.sar, dtype=np.float64)[0]
        g = lum.shape[1] // p
        for i in range(state.config.num_patches):
            r, c = divmod(i, g)
            sl = (slice(r * p, (r + 1) * p), slice(c * p, (c + 1) * p))
            s = float(np.clip(ssim(lum[sl], sar[sl]), -1.0, 1.0))
            points.append(AlignmentPoint(s, float(cos[i]), i, pair.sample_id))
    return points


def rank_correlation(points: list[AlignmentPoint]) -> float:
    s = np.array([pt.ssim for pt in points])
    c = np.array([pt.cosine for pt in points])
    if s.std() == 0 or c.std() == 0:
        return float("nan")
    return float(spearmanr(s, c).statistic)


# -- projections and probes ----------------------------------------------------------

def pca_project(embeddings, k: int = 2) -> np.ndarray:
    """Scores on the top-k principal directions; each direction's first nonzero loading is positive."""
    x = np.asarray(getattr(embeddings, "data", embeddings), dtype=np.float64)
    n = x.shape[0]
    if n <= k:
        raise ValueError(f"need more than {k} rows, got {n}")
    xc = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:k]
    for row in comps:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1
    return xc @ comps.T


@dataclass
class ProbeConfig:
    test_fraction: float = 0.5
    lr: float = 0.5
    max_iter: int = 5000
    tol: float = 1e-6
    l2: float = 1e-4
    seed: int = 0


def _split(n: int, labels: np.ndarray, frac: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/test split."""
    train, test = [], []
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        k = int(round(frac * idx.size))
        if idx.size > 1:
            k = min(max(k, 1), idx.size - 1)
        test.extend(idx[:k])
        train.extend(idx[k:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def fit_softmax_regression(x: np.ndarray, y: np.ndarray, num_classes: int, cfg: ProbeConfig):
    n, d = x.shape
    w = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    onehot = np.eye(num_classes)[y]
    prev = np.inf
    for _ in range(cfg.max_iter):
        z = x @ w + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        loss = -np.log(p[np.arange(n), y] + 1e-300).mean() + 0.5 * cfg.l2 * (w * w).sum()
        if abs(prev - loss) < cfg.tol:
            break
        prev = loss
        g = (p - onehot) / n
        w -= cfg.lr * (x.T @ g + cfg.l2 * w)
        b -= cfg.lr * g.sum(axis=0)
    return w, b


def linear_probe(features, labels, config: ProbeConfig | None = None) -> float:
    """Held-out accuracy of a multinomial logistic regression on frozen features.

    Features are standardized with training-split statistics before fitting.
    """
    cfg = config or ProbeConfig()
    x = np.asarray(getattr(features, "data", features), dtype=np.float64)
    y_raw = np.asarray(labels)
    classes = np.unique(y_raw)
    if classes.size < 2:
        raise ValueError("linear probe needs at least two classes")
    y = np.searchsorted(classes, y_raw)
    rng = np.random.default_rng(cfg.seed)
    train, test = _split(len(y), y, cfg.test_fraction, rng)
    mu = x[train].mean(axis=0)
    sd = x[train].std(axis=0)
    sd[sd < 1e-12] = 1.0
    xs = (x - mu) / sd
    w, b = fit_softmax_regression(xs[train], y[train], classes.size, cfg)
    pred = np.argmax(xs[test] @ w + b, axis=1)
    return float((pred == y[test]).mean())


def pooled_features(state: ModelState, images: np.ndarray, modality: str, batch: int = 32) -> np.ndarray:
    """Mean-pooled encoder tokens for unmasked images [n, C, H, W] -> [n, D]."""
    plan = MaskPlan.full(state.config.num_patches)
    out = []
    for i in range(0, len(images), batch):
        chunk = np.asarray(images[i:i + batch], dtype=state.patch_embed.pos.dtype)
        tokens = encode_visible(state, chunk, modality, plan)
        out.append(tokens.data.mean(axis=1))
    return np.concatenate(out).astype(np.float64)


def token_embeddings(state: ModelState, images: np.ndarray, modality: str, batch: int = 32) -> np.ndarray:
    """All encoder tokens of unmasked images, flattened to [n*M, D]."""
    plan = MaskPlan.full(state.config.num_patches)
    out = []
    for i in range(0, len(images), batch):
        chunk = np.asarray(images[i:i + batch], dtype=state.patch_embed.pos.dtype)
        out.append(encode_visible(state, chunk, modality, plan).data.reshape(-1, state.config.dim))
    return np.concatenate(out).astype(np.float64)


def pooled_global(state: ModelState, images: np.ndarray, modality: str) -> np.ndarray:
    plan = MaskPlan.full(state.config.num_patches)
    return global_pool(encode_visible(state, images, modality, plan)).data


def chance_level(labels) -> float:
    return 1.0 / np.unique(np.asarray(labels)).size


def is_finite_report(report: SpectrumReport) -> bool:
    return bool(np.isfinite(report.values).all() and math.isfinite(report.effective_rank))
