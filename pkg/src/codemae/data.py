"""Synthetic optical/SAR scenes, ingestion, normalization, masking and batching.

A ``Scene`` is the shared ground truth both sensors observe: a layered
region map, per-region surface attributes, and a smooth relief field. The
optical renderer turns it into colour with chromatic texture and sun
shading; the SAR renderer into backscatter with Gamma speckle and
side-looking shading, log-compressed to [0, 1].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image
from scipy import ndimage

from .model import MaskPlan
from .objectives import Batch, BatchingError


class IngestionError(IOError):
    """A manifest row or image file could not be ingested."""


class NormStatsError(ValueError):
    """Normalization statistics are missing or degenerate."""


# -- scenes --------------------------------------------------------------------

@dataclass
class Scene:
    structure: np.ndarray  # [H, W] region ids, contiguous from 0
    edges: np.ndarray  # [H, W] bool, region boundary pixels
    region_class: np.ndarray  # [R] class id per region
    region_color: np.ndarray  # [R, 3] optical base colour
    region_backscatter: np.ndarray  # [R] SAR mean backscatter
    relief: np.ndarray  # [H, W] smooth terrain height
    seed: int

    @property
    def num_regions(self) -> int:
        return int(self.region_class.shape[0])

    def class_histogram(self, num_classes: int) -> np.ndarray:
        areas = np.bincount(self.structure.ravel(), minlength=self.num_regions)
        return np.bincount(self.region_class, weights=areas, minlength=num_classes) / areas.sum()

    def label(self, num_classes: int) -> int:
        """Dominant surface class by area."""
        return int(np.argmax(self.class_histogram(num_classes)))


def region_edges(structure: np.ndarray) -> np.ndarray:
    e = np.zeros(structure.shape, dtype=bool)
    dx = structure[:, 1:] != structure[:, :-1]
    dy = structure[1:, :] != structure[:-1, :]
    e[:, 1:] |= dx
    e[:, :-1] |= dx
    e[1:, :] |= dy
    e[:-1, :] |= dy
    return e


def smooth_field(rng: np.random.Generator, h: int, w: int, sigma: float) -> np.ndarray:
    """Zero-mean, unit-std Gaussian random field (periodic boundary)."""
    f = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
    return (f - f.mean()) / (f.std() + 1e-12)


# loose land-cover prototypes: vegetation, bare soil, water, built-up
CLASS_COLORS = np.array([[0.25, 0.5, 0.2], [0.6, 0.5, 0.35], [0.15, 0.25, 0.5], [0.7, 0.7, 0.7]])
CLASS_BACKSCATTER = np.array([0.5, 0.3, 0.08, 0.95])


def _class_prototypes(num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    if num_classes <= len(CLASS_COLORS):
        return CLASS_COLORS[:num_classes], CLASS_BACKSCATTER[:num_classes]
    t = np.linspace(0.1, 0.9, num_classes)
    return np.stack([t, t[::-1], np.full_like(t, 0.5)], axis=1), t


def gen_scene(seed: int, H: int = 64, W: int = 64, region_count: int = 6, num_classes: int = 4,
              class_signal: float = 0.5) -> Scene:
    """Layered random rectangles/ellipses; the last shape drawn wins each pixel.

    Region colour and backscatter blend a class prototype (weight
    ``class_signal``) with a uniform random draw.
    """
    if region_count < 2:
        raise ValueError("region_count must be >= 2")
    rng = np.random.default_rng(seed)
    raw = np.zeros((H, W), dtype=np.int64)
    yy, xx = np.mgrid[0:H, 0:W]
    for rid in range(1, region_count):
        h = rng.uniform(0.2, 0.6) * H
        w = rng.uniform(0.2, 0.6) * W
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        if rng.random() < 0.5:
            inside = (np.abs(yy - cy) <= h / 2) & (np.abs(xx - cx) <= w / 2)
        else:
            inside = ((yy - cy) / (h / 2)) ** 2 + ((xx - cx) / (w / 2)) ** 2 <= 1.0
        raw[inside] = rid
    present, structure = np.unique(raw, return_inverse=True)
    structure = structure.reshape(H, W).astype(np.int32)
    all_class = rng.integers(0, num_classes, size=region_count)
    proto_color, proto_bs = _class_prototypes(num_classes)
    a = class_signal
    all_color = a * proto_color[all_class] + (1 - a) * rng.uniform(0.15, 0.85, size=(region_count, 3))
    all_bs = a * proto_bs[all_class] + (1 - a) * rng.uniform(0.1, 1.0, size=region_count)
    relief = smooth_field(rng, H, W, sigma=max(H, W) / 8)
    return Scene(
        structure=structure,
        edges=region_edges(structure),
        region_class=all_class[present],
        region_color=all_color[present],
        region_backscatter=all_bs[present],
        relief=relief,
        seed=seed,
    )


# -- rendering ---------------------------------------------------------------------

@dataclass
class RenderConfig:
    texture_amp: float = 0.12
    texture_period: float = 6.0
    chroma_noise: float = 0.03
    smooth_noise: float = 0.03
    cloud_prob: float = 0.0
    looks: float = 4.0  # math.inf disables speckle
    azimuth_deg: float = 0.0
    sun_azimuth_deg: float = 20.0
    shading_amp: float = 0.6
    sar_texture_amp: float = 0.5
    asynchrony: bool = False
    num_classes: int = 4
    class_signal: float = 0.5  # scene generation: prototype weight of region appearance


def _directional_slope(relief: np.ndarray, azimuth_deg: float) -> np.ndarray:
    gy, gx = np.gradient(relief)
    a = math.radians(azimuth_deg)
    s = math.cos(a) * gx + math.sin(a) * gy
    return s / (np.abs(s).max() + 1e-12)


def _class_texture(scene: Scene, rng: np.random.Generator, cfg: RenderConfig) -> np.ndarray:
    """Oriented stripes per region; orientation is set by the region's class."""
    h, w = scene.structure.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.zeros((h, w))
    phases = rng.uniform(0, 2 * np.pi, size=scene.num_regions)
    for rid in range(scene.num_regions):
        theta = np.pi * scene.region_class[rid] / cfg.num_classes
        arg = 2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / cfg.texture_period + phases[rid]
        sel = scene.structure == rid
        out[sel] = np.sin(arg[sel])
    return out


def _perturbed_structure(scene: Scene, rng: np.random.Generator) -> np.ndarray:
    """Dilate or erode one random region by a pixel (temporal asynchrony)."""
    s = scene.structure.copy()
    rid = int(rng.integers(1, scene.num_regions)) if scene.num_regions > 1 else 0
    sel = s == rid
    if rng.random() < 0.5:
        grown = ndimage.binary_dilation(sel, iterations=2)
        s[grown] = rid
    else:
        shrunk = ndimage.binary_erosion(sel, iterations=2)
        ring = sel & ~shrunk
        if ring.any():
            fill = ndimage.grey_dilation(np.where(ring, -1, s), size=3)
            s[ring] = np.where(fill[ring] >= 0, fill[ring], 0)
    return s


def render_optical(scene: Scene, seed: int, cfg: RenderConfig | None = None) -> np.ndarray:
    """[3, H, W] colour image in [0, 1]."""
    cfg = cfg or RenderConfig()
    rng = np.random.default_rng(seed)
    h, w = scene.structure.shape
    structure = _perturbed_structure(scene, rng) if cfg.asynchrony else scene.structure
    base = scene.region_color[structure].transpose(2, 0, 1)
    shade = 1.0 + cfg.shading_amp * _directional_slope(scene.relief, cfg.sun_azimuth_deg)
    img = base * shade[None]
    if cfg.texture_amp:
        tint = rng.uniform(0.5, 1.5, size=(3, 1, 1))
        img = img + cfg.texture_amp * tint * _class_texture(scene, rng, cfg)[None]
    if cfg.chroma_noise:
        img = img + cfg.chroma_noise * rng.standard_normal((3, h, w))
    if cfg.smooth_noise:
        img = img + cfg.smooth_noise * np.stack([smooth_field(rng, h, w, max(h, w) / 16) for _ in range(3)])
    if cfg.cloud_prob and rng.random() < cfg.cloud_prob:
        cloud = np.clip(smooth_field(rng, h, w, max(h, w) / 10) - 0.5, 0, None)
        alpha = np.clip(cloud, 0, 1)[None]
        img = img * (1 - alpha) + 0.95 * alpha
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def speckle(rng: np.random.Generator, shape, looks: float) -> np.ndarray:
    """Unit-mean multiplicative speckle, Gamma(looks, 1/looks)."""
    if math.isinf(looks):
        return np.ones(shape)
    return rng.gamma(looks, 1.0 / looks, size=shape)


def render_sar(scene: Scene, seed: int, cfg: RenderConfig | None = None) -> np.ndarray:
    """[1, H, W] log-compressed backscatter in [0, 1]."""
    cfg = cfg or RenderConfig()
    rng = np.random.default_rng(seed)
    structure = _perturbed_structure(scene, rng) if cfg.asynchrony else scene.structure
    sigma0 = scene.region_backscatter[structure]
    sigma0 = sigma0 * (1.0 + cfg.sar_texture_amp * 0.5 * (1 + _class_texture(scene, rng, cfg)))
    sigma0 = sigma0 * np.exp(2.0 * cfg.shading_amp * _directional_slope(scene.relief, cfg.azimuth_deg))
    intensity = sigma0 * speckle(rng, sigma0.shape, cfg.looks)
    db = 10.0 * np.log10(np.maximum(intensity, 1e-6))
    lo, hi = db.min(), db.max()
    out = (db - lo) / (hi - lo) if hi > lo else np.zeros_like(db)
    return out[None].astype(np.float32)


def luminance(optical: np.ndarray) -> np.ndarray:
    w = np.asarray((0.299, 0.587, 0.114), dtype=optical.dtype)
    return np.tensordot(w, optical, axes=(0, 0))


def detect_edges(img: np.ndarray, count: int, sigma: float = 2.0) -> np.ndarray:
    """The ``count`` pixels with the largest Sobel magnitude after Gaussian smoothing."""
    g = np.asarray(img, dtype=np.float64)
    if sigma:
        g = ndimage.gaussian_filter(g, (0, sigma, sigma) if g.ndim == 3 else sigma)
    if g.ndim == 3:
        mag = sum(np.hypot(ndimage.sobel(c, 0), ndimage.sobel(c, 1)) for c in g)
    else:
        mag = np.hypot(ndimage.sobel(g, 0), ndimage.sobel(g, 1))
    out = np.zeros(mag.shape, dtype=bool)
    out.ravel()[np.argsort(mag.ravel())[::-1][:count]] = True
    return out


def edge_overlap(detected: np.ndarray, reference: np.ndarray, tolerance: int = 1) -> float:
    """Fraction of detected edge pixels within ``tolerance`` px of a reference edge."""
    if not detected.any():
        return 0.0
    near = ndimage.binary_dilation(reference, iterations=tolerance) if tolerance else reference
    return float((detected & near).sum() / detected.sum())


# -- pairs and registry --------------------------------------------------------------

@dataclass
class ImagePair:
    optical: np.ndarray | None
    sar: np.ndarray | None
    paired: bool
    dataset_id: str
    sample_id: str
    label: int | None = None

    def __post_init__(self):
        if self.paired:
            if self.optical is None or self.sar is None:
                raise ValueError(f"{self.sample_id}: paired sample needs both modalities")
            if self.optical.shape[-2:] != self.sar.shape[-2:]:
                raise IngestionError(f"{self.sample_id}: optical {self.optical.shape[-2:]} "
                                     f"and SAR {self.sar.shape[-2:]} extents differ")

    def load(self) -> "ImagePair":
        return self


def synthetic_pair(seed: int, size: int = 64, region_count: int = 6, render: RenderConfig | None = None,
                   dataset_id: str = "synthetic", paired: bool = True) -> ImagePair:
    render = render or RenderConfig()
    scene = gen_scene(seed, size, size, region_count, render.num_classes, render.class_signal)
    sub = np.random.SeedSequence(seed).spawn(2)
    opt = render_optical(scene, int(sub[0].generate_state(1)[0]), render)
    sar = render_sar(scene, int(sub[1].generate_state(1)[0]), render)
    return ImagePair(opt, sar, paired, dataset_id, f"{dataset_id}-{seed:06d}", scene.label(render.num_classes))


def synthetic_registry(count: int, seed: int = 0, size: int = 64, unpaired_fraction: float = 0.0,
                       render: RenderConfig | None = None, dataset_id: str = "synthetic") -> list[ImagePair]:
    """Scenes seeded ``seed*100003 + i``; unpaired rows keep one modality each."""
    out = []
    rng = np.random.default_rng(seed)
    n_unpaired = int(round(unpaired_fraction * count))
    unpaired_idx = set(rng.choice(count, size=n_unpaired, replace=False).tolist()) if n_unpaired else set()
    for i in range(count):
        p = synthetic_pair(seed * 100003 + i, size, render=render, dataset_id=dataset_id)
        if i in unpaired_idx:
            keep_optical = len([j for j in unpaired_idx if j < i]) % 2 == 0
            p = ImagePair(p.optical if keep_optical else None, None if keep_optical else p.sar,
                          False, p.dataset_id, p.sample_id, p.label)
        out.append(p)
    return out


# -- masking -------------------------------------------------------------------------

def make_mask(M: int, ratio: float, rng: np.random.Generator) -> MaskPlan:
    """Uniform random mask of round(ratio*M) patches; visible order is shuffled."""
    if not 0 < ratio < 1:
        raise ValueError(f"mask ratio must lie in (0, 1), got {ratio}")
    n_masked = int(math.floor(ratio * M + 0.5))
    if n_masked in (0, M):
        raise ValueError(f"ratio {ratio} masks {n_masked} of {M} patches")
    order = rng.permutation(M)
    visible, masked = order[: M - n_masked], order[M - n_masked:]
    mask = np.zeros(M, dtype=np.int8)
    mask[masked] = 1
    return MaskPlan(mask, ratio, visible, masked)


# -- normalization -----------------------------------------------------------------

@dataclass
class NormStats:
    entries: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def get(self, dataset_id: str, modality: str):
        try:
            return self.entries[(dataset_id, modality)]
        except KeyError:
            raise NormStatsError(f"no statistics for dataset {dataset_id!r} modality {modality!r}") from None

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["dataset_id", "modality", "channel", "mean", "std"])
            for (ds, mod), (mu, sd) in sorted(self.entries.items()):
                for c in range(mu.shape[0]):
                    w.writerow([ds, mod, c, repr(float(mu[c])), repr(float(sd[c]))])

    @classmethod
    def load(cls, path) -> "NormStats":
        rows: dict[tuple[str, str], dict[int, tuple[float, float]]] = {}
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh, delimiter="\t"):
                rows.setdefault((row["dataset_id"], row["modality"]), {})[int(row["channel"])] = (
                    float(row["mean"]), float(row["std"]))
        entries = {}
        for key, chans in rows.items():
            order = sorted(chans)
            entries[key] = (np.array([chans[c][0] for c in order]), np.array([chans[c][1] for c in order]))
        return cls(entries)


def fit_norm_stats(samples: dict[str, list[ImagePair]] | list[ImagePair]) -> NormStats:
    """Channel mean/std per (dataset, modality) over all pixels of the samples."""
    if not isinstance(samples, dict):
        grouped: dict[str, list[ImagePair]] = {}
        for s in samples:
            grouped.setdefault(s.dataset_id, []).append(s)
        samples = grouped
    stats = NormStats()
    for ds, items in samples.items():
        for mod in ("optical", "sar"):
            imgs = [getattr(p.load(), mod) for p in items]
            imgs = [im for im in imgs if im is not None]
            if not imgs:
                continue
            stack = np.stack([im.astype(np.float64) for im in imgs])
            mu = stack.mean(axis=(0, 2, 3))
            sd = stack.std(axis=(0, 2, 3))
            if (sd <= 1e-12).any():
                raise NormStatsError(f"dataset {ds!r} {mod}: zero-variance channel")
            stats.entries[(ds, mod)] = (mu, sd)
    return stats


def normalize(image: np.ndarray, stats: NormStats, dataset_id: str, modality: str) -> np.ndarray:
    mu, sd = stats.get(dataset_id, modality)
    return ((image - mu[:, None, None]) / sd[:, None, None]).astype(image.dtype)


def denormalize(image: np.ndarray, stats: NormStats, dataset_id: str, modality: str) -> np.ndarray:
    mu, sd = stats.get(dataset_id, modality)
    return (image * sd[:, None, None] + mu[:, None, None]).astype(image.dtype)


# -- batching ------------------------------------------------------------------------

@dataclass
class DataConfig:
    batch_size: int = 8
    paired_batches: float = 1.0  # paired : unpaired batch weights
    unpaired_batches: float = 1.0
    mask_ratio: float = 0.75
    num_patches: int = 64
    hflip: bool = True


@dataclass
class BatchPlan:
    sample_ids: list[str]
    paired: bool
    plans: list[MaskPlan]
    epoch: int
    step: int


def _prepare(pair: ImagePair, stats: NormStats | None, flip: bool) -> ImagePair:
    pair = pair.load()

    def prep(img, mod):
        if img is None:
            return None
        if stats is not None:
            img = normalize(img, stats, pair.dataset_id, mod)
        return np.ascontiguousarray(img[..., ::-1]) if flip else img

    return ImagePair(prep(pair.optical, "optical"), prep(pair.sar, "sar"), pair.paired,
                     pair.dataset_id, pair.sample_id, pair.label)


def batch_iter(registry: list, config: DataConfig, rng: np.random.Generator,
               stats: NormStats | None = None, steps: int | None = None,
               epoch: int = 0) -> Iterator[tuple[BatchPlan, Batch]]:
    """Homogeneous batches for one epoch (``steps`` defaults to len/batch).

    Each batch is paired with probability paired/(paired+unpaired). Unpaired
    batches hold batch_size/2 optical-only and batch_size/2 SAR-only samples;
    paired samples may donate a single modality to them.
    """
    if not registry:
        raise BatchingError("dataset registry is empty")
    paired_pool = [i for i, r in enumerate(registry) if r.paired]
    optical_pool = [i for i, r in enumerate(registry) if r.paired or r.load().optical is not None]
    sar_pool = [i for i, r in enumerate(registry) if r.paired or r.load().sar is not None]
    wp, wu = config.paired_batches, config.unpaired_batches
    if wp + wu <= 0:
        raise ValueError("batch weights must not both be zero")
    p_paired = wp / (wp + wu)
    if p_paired > 0 and not paired_pool:
        raise BatchingError("paired batches requested but the registry holds no paired samples")
    if p_paired < 1 and (not optical_pool or not sar_pool):
        raise BatchingError("unpaired batches need both optical and SAR samples")
    b = config.batch_size
    steps = steps if steps is not None else max(1, math.ceil(len(registry) / b))

    queues: dict[str, list[int]] = {}

    def draw(name: str, pool: list[int], k: int) -> list[int]:
        q = queues.setdefault(name, [])
        while len(q) < k:
            q.extend(rng.permutation(pool).tolist())
        taken, queues[name] = q[:k], q[k:]
        return taken

    for step in range(steps):
        paired = bool(rng.random() < p_paired)
        if paired:
            idx = draw("paired", paired_pool, b)
            items = [registry[i].load() for i in idx]
            items = [ImagePair(p.optical, p.sar, True, p.dataset_id, p.sample_id, p.label) for p in items]
        else:
            half = b // 2
            opt = [registry[i].load() for i in draw("optical", optical_pool, b - half)]
            sar = [registry[i].load() for i in draw("sar", sar_pool, half)]
            items = ([ImagePair(p.optical, None, False, p.dataset_id, p.sample_id, p.label) for p in opt]
                     + [ImagePair(None, p.sar, False, p.dataset_id, p.sample_id, p.label) for p in sar])
        flips = rng.random(len(items)) < 0.5 if config.hflip else np.zeros(len(items), dtype=bool)
        items = [_prepare(p, stats, bool(f)) for p, f in zip(items, flips)]
        plans = [make_mask(config.num_patches, config.mask_ratio, rng) for _ in items]
        plan = BatchPlan([p.sample_id for p in items], paired, plans, epoch, step)
        yield plan, Batch.from_pairs(items, plans)


# -- directory ingestion ------------------------------------------------------------

MANIFEST_COLUMNS = ("dataset_id", "sample_id", "optical_path", "sar_path", "paired_flag", "label")


def read_png(path) -> np.ndarray:
    """[C, H, W] float32 in [0, 1]; 8-bit scales by 1/255, 16-bit by 1/65535."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.array(im)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read image {path}: {exc}") from exc
    if mode in ("I;16", "I;16B", "I;16L", "I") or arr.dtype == np.uint16:
        scaled = arr.astype(np.float64) / 65535.0
    elif arr.dtype == np.uint8 or mode in ("L", "RGB", "RGBA"):
        scaled = arr.astype(np.float64) / 255.0
    else:
        raise IngestionError(f"{path}: unsupported PNG mode {mode}")
    if scaled.ndim == 2:
        scaled = scaled[None]
    else:
        scaled = scaled[..., :3].transpose(2, 0, 1)
    return scaled.astype(np.float32)


def write_png(path, image: np.ndarray, bits: int = 8) -> None:
    """Write [C, H, W] values in [0, 1] as an 8-bit RGB/L or 16-bit L PNG."""
    x = np.clip(np.asarray(image, dtype=np.float64), 0, 1)
    if bits == 16:
        if x.shape[0] != 1:
            raise ValueError("16-bit output supports single-channel images only")
        Image.fromarray(np.round(x[0] * 65535).astype(np.uint16)).save(path)
        return
    arr = np.round(x * 255).astype(np.uint8)
    Image.fromarray(arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)).save(path)


@dataclass
class LazyPair:
    """Manifest entry decoded on first ``load``."""

    dataset_id: str
    sample_id: str
    optical_path: Path | None
    sar_path: Path | None
    paired: bool
    label: int | None = None
    _cache: ImagePair | None = field(default=None, repr=False)

    def load(self) -> ImagePair:
        if self._cache is None:
            opt = read_png(self.optical_path) if self.optical_path else None
            sar = read_png(self.sar_path) if self.sar_path else None
            if opt is not None and sar is not None and opt.shape[-2:] != sar.shape[-2:]:
                raise IngestionError(f"{self.sample_id}: optical {opt.shape[-2:]} and SAR {sar.shape[-2:]} "
                                     "extents differ")
            if sar is not None and sar.shape[0] != 1:
                sar = sar[:1]
            self._cache = ImagePair(opt, sar, self.paired, self.dataset_id, self.sample_id, self.label)
        return self._cache


def load_image_dir(root, manifest="manifest.tsv", eager_check: bool = True) -> list[LazyPair]:
    """Registry entries from a TSV manifest; pairing comes from the columns."""
    root = Path(root)
    mpath = Path(manifest) if Path(manifest).is_absolute() else root / manifest
    entries = []
    try:
        fh = open(mpath, encoding="utf-8", newline="")
    except OSError as exc:
        raise IngestionError(f"cannot open manifest {mpath}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#") or line.startswith("dataset_id\t"):
                continue
            cols = line.split("\t")
            if len(cols) < 5:
                raise IngestionError(f"{mpath}:{lineno}: expected >= 5 tab-separated columns")
            ds, sid, opath, spath, flag = cols[:5]
            label = int(cols[5]) if len(cols) > 5 and cols[5] not in ("", "-") else None
            opath = root / opath if opath not in ("", "-") else None
            spath = root / spath if spath not in ("", "-") else None
            paired = flag.strip().lower() in ("1", "true", "paired", "yes")
            if paired and (opath is None or spath is None):
                raise IngestionError(f"{sid}: paired row needs both optical and SAR paths")
            if opath is None and spath is None:
                raise IngestionError(f"{sid}: row names no image")
            entry = LazyPair(ds, sid, opath, spath, paired, label)
            if eager_check and paired:
                entry.load()
            entries.append(entry)
    return entries


def write_manifest(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(MANIFEST_COLUMNS) + "\n")
        for r in rows:
            fh.write("\t".join("-" if r.get(c) is None else str(r[c]) for c in MANIFEST_COLUMNS) + "\n")


def registry_labels(registry: list) -> np.ndarray:
    return np.array([r.load().label for r in registry])

