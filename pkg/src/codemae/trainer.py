"""AdamW with warmup + cosine schedule, and the pretraining loop."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numcore as nc
from .container import read_checkpoint, write_checkpoint
from .data import (
    DataConfig,
    NormStats,
    RenderConfig,
    batch_iter,
    fit_norm_stats,
    load_image_dir,
    synthetic_registry,
)
from .model import (
    ModelConfig,
    ModelState,
    TeacherHandle,
    feature_file_teacher,
    frozen_random_teacher,
    init_model,
)
from .objectives import DEGRADATION_MODES, LossBreakdown, ObjectiveConfig, total_loss

METRIC_COLUMNS = ("step", "epoch", "lr", "l_mae", "l_okd", "l_ccl", "l_cdr", "total", "paired_flag")


class NumericalAbort(FloatingPointError):
    """Training hit a non-finite gradient or loss."""


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    base_lr: float = 1.5e-4
    min_lr: float = 0.0
    warmup_epochs: int = 5
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    lr_batch_scaling: bool = False
    grad_clip: float = 0.0
    seed: int = 0
    mask_ratio: float = 0.75
    tau: float = 0.07
    enable_okd: bool = True
    enable_ccl: bool = True
    enable_cdr: bool = True
    rigid_contrastive_baseline: bool = False
    degradation: str = "grayscale"
    sum_patch_error: bool = False
    sum_contrastive: bool = False
    image_size: int = 64
    patch_size: int = 8
    dim: int = 64
    heads: int = 4
    enc_depth: int = 4
    dec_depth: int = 8
    cdr_depth: int = 8
    dec_dim: int = 64
    mlp_ratio: int = 4
    init_std: float = 0.02
    teacher: str = "frozen-random"
    teacher_path: str = ""
    teacher_width: int = 0
    teacher_seed: int = 1234
    data_dir: str = ""
    manifest: str = "manifest.tsv"
    num_scenes: int = 64
    data_seed: int = 0
    unpaired_fraction: float = 0.0
    paired_batches: float = 1.0
    unpaired_batches: float = 0.0
    hflip: bool = True
    checkpoint_every: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must lie in [0, epochs)")
        if not 0 < self.mask_ratio < 1:
            raise ValueError("mask_ratio must lie in (0, 1)")
        if self.degradation not in DEGRADATION_MODES:
            raise ValueError(f"degradation must be one of {DEGRADATION_MODES}")
        if self.enable_ccl and self.batch_size < 2:
            raise ValueError("contrastive terms need batch_size >= 2")
        if self.teacher not in ("frozen-random", "feature-file", "none"):
            raise ValueError(f"unknown teacher {self.teacher!r}")
        if self.teacher == "feature-file" and not self.teacher_path:
            raise ValueError("feature-file teacher needs teacher_path")
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            image_size=self.image_size, patch_size=self.patch_size, dim=self.dim, heads=self.heads,
            enc_depth=self.enc_depth, dec_depth=self.dec_depth, cdr_depth=self.cdr_depth,
            dec_dim=self.dec_dim, dec_heads=self.heads if self.dec_dim % self.heads == 0 else 1,
            mlp_ratio=self.mlp_ratio, cdr_channels=1 if self.degradation == "grayscale" else 3,
            init_std=self.init_std,
        )

    def objective_config(self) -> ObjectiveConfig:
        return ObjectiveConfig(
            tau=self.tau, enable_okd=self.enable_okd, enable_ccl=self.enable_ccl, enable_cdr=self.enable_cdr,
            rigid_contrastive_baseline=self.rigid_contrastive_baseline, degradation=self.degradation,
            sum_patch_error=self.sum_patch_error, sum_contrastive=self.sum_contrastive,
        )

    def data_config(self) -> DataConfig:
        return DataConfig(batch_size=self.batch_size, paired_batches=self.paired_batches,
                          unpaired_batches=self.unpaired_batches, mask_ratio=self.mask_ratio,
                          num_patches=(self.image_size // self.patch_size) ** 2, hflip=self.hflip)

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- schedule and optimizer ---------------------------------------------------------

def lr_schedule(step: int, total_steps: int, warmup_steps: int, base_lr: float, min_lr: float = 0.0) -> float:
    """Linear ramp 0 -> base over warmup, then half-cosine to ``min_lr``."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if warmup_steps and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return min_lr + 0.5 * (base_lr - min_lr) * (1 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, nc.Tensor], grads: dict[str, np.ndarray | None], state: AdamState,
               lr: float, beta1: float = 0.9, beta2: float = 0.95, eps: float = 1e-8,
               weight_decay: float = 0.05, decay: set[str] | None = None) -> None:
    """Decoupled weight decay Adam with bias-corrected moments, in place.

    ``decay`` names the parameters that receive weight decay (all by default).
    Missing gradients count as zero.
    """
    state.step += 1
    t = state.step
    bc1 = 1 - beta1 ** t
    bc2 = 1 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.isfinite(g).all():
            raise NumericalAbort(f"non-finite gradient in parameter {name!r}")
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        new = p.data - lr * update
        if weight_decay and (decay is None or name in decay):
            new = new - lr * weight_decay * p.data
        p.data = new.astype(p.dtype, copy=False)


def decay_set(state: ModelState) -> set[str]:
    """Matrices decay; biases, norms, tokens and positional tables do not."""
    return {n for n, t in state.named_parameters() if t.ndim >= 2 and not n.endswith("pos")}


# -- training loop ------------------------------------------------------------------

@dataclass
class StepRecord:
    step: int
    epoch: int
    lr: float
    l_mae: float
    l_okd: float
    l_ccl: float
    l_cdr: float
    total: float
    paired_flag: int

    @classmethod
    def from_breakdown(cls, step, epoch, lr, b: LossBreakdown) -> "StepRecord":
        return cls(step, epoch, lr, float(b.l_mae), float(b.l_okd), float(b.l_ccl), float(b.l_cdr),
                   float(b.total), int(b.paired))


@dataclass
class TrainResult:
    state: ModelState
    records: list[StepRecord]
    teacher: TeacherHandle | None
    stats: NormStats
    optimizer: AdamState


def build_registry(cfg: TrainConfig):
    if cfg.data_dir:
        return load_image_dir(cfg.data_dir, cfg.manifest)
    return synthetic_registry(cfg.num_scenes, seed=cfg.data_seed, size=cfg.image_size,
                              unpaired_fraction=cfg.unpaired_fraction, render=RenderConfig())


def build_teacher(cfg: TrainConfig, mcfg: ModelConfig) -> TeacherHandle | None:
    if cfg.teacher == "none" or not cfg.enable_okd:
        return None
    if cfg.teacher == "feature-file":
        return feature_file_teacher(cfg.teacher_path, mcfg, seed=cfg.teacher_seed)
    return frozen_random_teacher(mcfg, cfg.teacher_seed, cfg.teacher_width or None)


def steps_per_epoch(cfg: TrainConfig, n: int) -> int:
    return max(1, math.ceil(n / cfg.batch_size))


def epoch_batches(cfg: TrainConfig, registry, stats: NormStats, epoch: int):
    """Batches of one epoch; a pure function of (config, epoch)."""
    rng = np.random.default_rng([cfg.seed, epoch])
    return batch_iter(registry, cfg.data_config(), rng, stats=stats,
                      steps=steps_per_epoch(cfg, len(registry)), epoch=epoch)


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values() if g is not None))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for k, g in grads.items():
            if g is not None:
                grads[k] = (g * scale).astype(g.dtype)


def train(cfg: TrainConfig, out_dir=None, resume=None, max_steps: int | None = None,
          registry=None, log=None) -> TrainResult:
    """Pretrain from scratch (or from ``resume``); deterministic given the config.

    Writes ``metrics.csv`` and periodic checkpoints when ``out_dir`` is set.
    """
    cfg.validate()
    mcfg = cfg.model_config()
    registry = registry if registry is not None else build_registry(cfg)
    if not registry:
        raise ValueError("empty training registry")
    first = registry[0].load()
    img = first.optical if first.optical is not None else first.sar
    if img.shape[-1] != cfg.image_size or img.shape[-2] != cfg.image_size:
        raise ValueError(f"data images are {img.shape[-2:]} but image_size is {cfg.image_size}")
    stats = fit_norm_stats([r.load() for r in registry])
    state = init_model(mcfg, seed=cfg.seed)
    teacher = build_teacher(cfg, mcfg)
    obj = cfg.objective_config()
    opt = AdamState()
    records: list[StepRecord] = []
    spe = steps_per_epoch(cfg, len(registry))
    total_steps = cfg.epochs * spe
    warmup = cfg.warmup_epochs * spe
    base_lr = cfg.base_lr * (cfg.batch_size / 2048 if cfg.lr_batch_scaling else 1.0)
    decay = decay_set(state)
    params = dict(state.named_parameters())

    start = 0
    if resume is not None:
        start, records = load_training_checkpoint(resume, state, opt, cfg)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        stats.save(out / "norm_stats.tsv")
        prior = out / "metrics.csv"
        if resume is not None and prior.exists():
            earlier = [r for r in read_metrics(prior) if r.step < start]
            if len(earlier) == start:
                records = earlier

    step = start
    stop = total_steps if max_steps is None else min(total_steps, start + max_steps)
    while step < stop:
        epoch, offset = divmod(step, spe)
        for j, (_, batch) in enumerate(epoch_batches(cfg, registry, stats, epoch)):
            if j < offset:
                continue
            if step >= stop:
                break
            lr = lr_schedule(step, total_steps, warmup, base_lr, cfg.min_lr)
            state.zero_grad()
            bd = total_loss(batch, state, teacher, obj)
            if not np.isfinite(float(bd.total)):
                raise NumericalAbort(f"non-finite loss at step {step}")
            nc.backward(bd.tensor)
            grads = {n: t.grad for n, t in params.items()}
            if cfg.grad_clip:
                _clip(grads, cfg.grad_clip)
            adamw_step(params, grads, opt, lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay, decay)
            rec = StepRecord.from_breakdown(step, epoch, lr, bd)
            records.append(rec)
            if log is not None:
                log(rec)
            step += 1
            if out is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                save_training_checkpoint(out / f"ckpt_{step:06d}.cdmf", state, opt, cfg, step, records, spe)
    if out is not None:
        write_metrics(out / "metrics.csv", records)
        save_training_checkpoint(out / "final.cdmf", state, opt, cfg, step, records, spe)
    state.zero_grad()
    return TrainResult(state, records, teacher, stats, opt)


# -- persistence ------------------------------------------------------------------

def write_metrics(path, records: list[StepRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in records:
            w.writerow([r.step, r.epoch, repr(r.lr), repr(r.l_mae), repr(r.l_okd), repr(r.l_ccl),
                        repr(r.l_cdr), repr(r.total), r.paired_flag])


def read_metrics(path) -> list[StepRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [StepRecord(int(r["step"]), int(r["epoch"]), float(r["lr"]), float(r["l_mae"]), float(r["l_okd"]),
                       float(r["l_ccl"]), float(r["l_cdr"]), float(r["total"]), int(r["paired_flag"]))
            for r in rows]


def config_to_text(cfg: TrainConfig) -> str:
    return "".join(f"{f.name}={_fmt(getattr(cfg, f.name))}\n" for f in fields(cfg))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def save_training_checkpoint(path, state: ModelState, opt: AdamState, cfg: TrainConfig, step: int,
                             records: list[StepRecord], spe: int = 1) -> None:
    tensors = {f"model.{n}": t.data for n, t in state.named_parameters()}
    for n in opt.m:
        tensors[f"adam.m.{n}"] = opt.m[n]
        tensors[f"adam.v.{n}"] = opt.v[n]
    tail = [asdict(r) for r in records[-5:]]
    meta = {
        "step": str(step),
        "epoch": str(step // max(1, spe)),
        "adam_step": str(opt.step),
        "config_hash": cfg.config_hash(),
        "config": json.dumps(asdict(cfg), sort_keys=True),
        "rng": json.dumps({"seed": cfg.seed, "stream": "default_rng([seed, epoch])"}),
        "history_tail": json.dumps(tail),
    }
    write_checkpoint(path, tensors, meta)


def load_model_checkpoint(path) -> tuple[ModelState, TrainConfig, dict[str, str]]:
    """Model state and training config stored in a checkpoint."""
    tensors, meta = read_checkpoint(path)
    cfg = TrainConfig(**json.loads(meta["config"]))
    state = init_model(cfg.model_config(), seed=cfg.seed)
    state.load_state_dict({k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")})
    return state, cfg, meta


def load_training_checkpoint(path, state: ModelState, opt: AdamState, cfg: TrainConfig):
    tensors, meta = read_checkpoint(path)
    if meta.get("config_hash") != cfg.config_hash():
        raise ValueError(f"checkpoint {path} was written with a different config")
    state.load_state_dict({k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")})
    opt.step = int(meta["adam_step"])
    opt.m = {k[len("adam.m."):]: v for k, v in tensors.items() if k.startswith("adam.m.")}
    opt.v = {k[len("adam.v."):]: v for k, v in tensors.items() if k.startswith("adam.v.")}
    tail = [StepRecord(**r) for r in json.loads(meta["history_tail"])]
    return int(meta["step"]), tail
