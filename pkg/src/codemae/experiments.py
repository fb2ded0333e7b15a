"""Variant sweeps shared by the CLI, the experiment scripts and the acceptance suite."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .data import synthetic_registry
from .diagnostics import ProbeConfig, linear_probe, pooled_features, singular_spectrum, token_embeddings
from .model import init_model
from .trainer import TrainConfig, train

# flag overrides per variant; everything else comes from the base config
VARIANTS = {
    "rigid": dict(enable_okd=True, enable_ccl=True, enable_cdr=False, rigid_contrastive_baseline=True),
    "baseline": dict(enable_okd=True, enable_ccl=False, enable_cdr=False, rigid_contrastive_baseline=False),
    "ccl": dict(enable_okd=True, enable_ccl=True, enable_cdr=False, rigid_contrastive_baseline=False),
    "full": dict(enable_okd=True, enable_ccl=True, enable_cdr=True, rigid_contrastive_baseline=False),
}


def variant_config(base: TrainConfig, variant: str, seed: int) -> TrainConfig:
    try:
        flags = VARIANTS[variant]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}") from None
    return dataclasses.replace(base, seed=seed, **flags)


@dataclass
class EvalSet:
    optical: np.ndarray
    sar: np.ndarray
    labels: np.ndarray


def eval_set(count: int, seed: int, size: int, stats) -> EvalSet:
    """Held-out labeled pairs, normalized with the training statistics."""
    from .data import normalize

    pairs = synthetic_registry(count, seed=seed, size=size)
    opt = np.stack([normalize(p.optical, stats, p.dataset_id, "optical") for p in pairs]).astype(np.float32)
    sar = np.stack([normalize(p.sar, stats, p.dataset_id, "sar") for p in pairs]).astype(np.float32)
    return EvalSet(opt, sar, np.array([p.label for p in pairs]))


def representation_rank(state, ev: EvalSet) -> float:
    """Effective rank of the pooled embeddings of both modalities, stacked."""
    feats = np.concatenate([pooled_features(state, ev.optical, "optical"), pooled_features(state, ev.sar, "sar")])
    return singular_spectrum(feats).effective_rank


def token_rank(state, ev: EvalSet) -> float:
    """Effective rank of all encoder tokens of both modalities."""
    toks = np.concatenate([token_embeddings(state, ev.optical, "optical"), token_embeddings(state, ev.sar, "sar")])
    return singular_spectrum(toks).effective_rank


def probe_pair(state, ev: EvalSet, seed: int) -> dict[str, float]:
    cfg = ProbeConfig(seed=seed)
    return {mod: linear_probe(pooled_features(state, getattr(ev, mod), mod), ev.labels, cfg)
            for mod in ("optical", "sar")}


@dataclass
class VariantRun:
    variant: str
    seed: int
    effective_rank: float  # all encoder tokens, both modalities
    pooled_rank: float  # mean-pooled per image
    probe: dict[str, float]
    final_loss: float


def run_variant(base: TrainConfig, variant: str, seed: int, eval_count: int = 200,
                eval_seed: int = 7919, probe: bool = True) -> VariantRun:
    cfg = variant_config(base, variant, seed)
    res = train(cfg)
    ev = eval_set(eval_count, eval_seed + seed, cfg.image_size, res.stats)
    acc = probe_pair(res.state, ev, seed) if probe else {}
    return VariantRun(variant, seed, token_rank(res.state, ev), representation_rank(res.state, ev), acc,
                      res.records[-1].total)


def random_encoder_run(base: TrainConfig, seed: int, eval_count: int = 200, eval_seed: int = 7919) -> VariantRun:
    """Untrained encoder with the same init seed, probed on the same held-out set."""
    cfg = dataclasses.replace(base, seed=seed)
    from .data import fit_norm_stats

    stats = fit_norm_stats(synthetic_registry(cfg.num_scenes, seed=cfg.data_seed, size=cfg.image_size,
                                              unpaired_fraction=cfg.unpaired_fraction))
    state = init_model(cfg.model_config(), seed=seed)
    ev = eval_set(eval_count, eval_seed + seed, cfg.image_size, stats)
    return VariantRun("random", seed, token_rank(state, ev), representation_rank(state, ev),
                      probe_pair(state, ev, seed), float("nan"))


def ordering_holds(ranks: dict[str, float]) -> bool:
    return ranks["rigid"] < ranks["baseline"] <= ranks["full"]


SWEEP_VARIANTS = ("rigid", "baseline", "ccl", "full")


def sweep(base: TrainConfig, seeds=range(5), variants=SWEEP_VARIANTS, eval_count: int = 200,
          with_random: bool = True, log=None) -> list[VariantRun]:
    """Train every variant on every seed; optionally add the untrained encoder per seed."""
    runs = []
    for seed in seeds:
        if with_random:
            runs.append(random_encoder_run(base, seed, eval_count))
            if log:
                log(runs[-1])
        for v in variants:
            runs.append(run_variant(base, v, seed, eval_count))
            if log:
                log(runs[-1])
    return runs


def by_seed(runs: list[VariantRun]) -> dict[int, dict[str, VariantRun]]:
    out: dict[int, dict[str, VariantRun]] = {}
    for r in runs:
        out.setdefault(r.seed, {})[r.variant] = r
    return out


def write_runs(path, runs: list[VariantRun]) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "seed", "effective_rank", "pooled_rank", "probe_optical", "probe_sar", "final_loss"])
        for r in runs:
            w.writerow([r.variant, r.seed, repr(r.effective_rank), repr(r.pooled_rank),
                        repr(r.probe.get("optical", float("nan"))),
                        repr(r.probe.get("sar", float("nan"))), repr(r.final_loss)])
