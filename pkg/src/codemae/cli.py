"""Command line entry point: gen-data, pretrain, diagnose, probe, gradcheck."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, config as cfgio, svg
from .container import ContainerError
from .data import (
    IngestionError,
    NormStats,
    fit_norm_stats,
    load_image_dir,
    normalize,
    synthetic_registry,
    write_manifest,
    write_png,
)
from .diagnostics import (
    ProbeConfig,
    alignment_vs_heterogeneity,
    heterogeneity_curve,
    linear_probe,
    pca_project,
    pooled_features,
    rank_correlation,
    singular_spectrum,
    token_embeddings,
)
from .gradsuite import COMPONENTS, run_suite
from .model import init_model
from .numcore import NonFiniteError
from .trainer import NumericalAbort, TrainConfig, load_model_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- run bookkeeping ------------------------------------------------------------------

def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest_file(out: Path, command: str, argv: list[str], config_path, resolved: str, started) -> None:
    """RunManifest: enough to rerun the command verbatim."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.txt").write_text(resolved, encoding="utf-8")
    lines = [
        f"command = {command}",
        f"argv = {' '.join(argv)}",
        f"config_path = {config_path or '-'}",
        f"output_dir = {out}",
        f"started = {started.isoformat(timespec='seconds')}",
        f"finished = {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}",
        f"version = {version_string()}",
        "",
        "# resolved config",
        resolved.rstrip("\n"),
    ]
    (out / "run_manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def variant_label(cfg: TrainConfig) -> str:
    if cfg.rigid_contrastive_baseline:
        return "rigid"
    parts = ["mae"] + [n for n, on in (("okd", cfg.enable_okd), ("ccl", cfg.enable_ccl), ("cdr", cfg.enable_cdr)) if on]
    return "+".join(parts)


def _dataset(data_dir) -> tuple[list, NormStats]:
    registry = load_image_dir(data_dir)
    stats_path = Path(data_dir) / "norm_stats.tsv"
    stats = NormStats.load(stats_path) if stats_path.exists() else fit_norm_stats([r.load() for r in registry])
    return registry, stats


def _stack(registry, stats, modality: str):
    rows = [r.load() for r in registry]
    rows = [p for p in rows if getattr(p, modality) is not None]
    imgs = [normalize(getattr(p, modality), stats, p.dataset_id, modality) for p in rows]
    return np.stack(imgs).astype(np.float32) if imgs else None, rows


# -- commands ------------------------------------------------------------------------

def cmd_gen_data(args) -> dict:
    out = Path(args.out)
    (out / "optical").mkdir(parents=True, exist_ok=True)
    (out / "sar").mkdir(parents=True, exist_ok=True)
    pairs = synthetic_registry(args.scenes, seed=args.seed, size=args.size, unpaired_fraction=args.unpaired_fraction)
    rows = []
    for p in pairs:
        opath = spath = None
        if p.optical is not None:
            opath = f"optical/{p.sample_id}.png"
            write_png(out / opath, p.optical, bits=8)
        if p.sar is not None:
            spath = f"sar/{p.sample_id}.png"
            write_png(out / spath, p.sar, bits=16)
        rows.append(dict(dataset_id=p.dataset_id, sample_id=p.sample_id, optical_path=opath, sar_path=spath,
                         paired_flag=int(p.paired), label=p.label))
    write_manifest(out / "manifest.tsv", rows)
    # statistics of the quantized files, as training will see them
    fit_norm_stats([r.load() for r in load_image_dir(out)]).save(out / "norm_stats.tsv")
    print(f"wrote {len(rows)} samples ({sum(r['paired_flag'] for r in rows)} paired) to {out}")
    return dict(scenes=args.scenes, size=args.size, seed=args.seed, unpaired_fraction=args.unpaired_fraction)


def cmd_pretrain(args) -> TrainConfig:
    cfg = cfgio.load(TrainConfig, args.config, args.set)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.txt").write_text(cfgio.dump(cfg), encoding="utf-8")

    def log(rec):
        if args.verbose or rec.step % 50 == 0:
            print(f"step {rec.step:5d} epoch {rec.epoch:3d} lr {rec.lr:.2e} total {rec.total:.4f} "
                  f"(mae {rec.l_mae:.4f} okd {rec.l_okd:.4f} ccl {rec.l_ccl:.4f} cdr {rec.l_cdr:.4f})", flush=True)

    res = train(cfg, out_dir=out, resume=args.resume, max_steps=args.max_steps, log=log)
    svg.write(out / "loss.svg", svg.Chart("pretraining loss", "step", "loss", [
        svg.Series(name, [r.step for r in res.records], [getattr(r, name) for r in res.records])
        for name in ("total", "l_mae", "l_okd", "l_ccl", "l_cdr")
    ]))
    print(f"finished {len(res.records)} steps; checkpoint {out / 'final.cdmf'}")
    return cfg


def cmd_diagnose(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    registry, stats = _dataset(args.data)
    if args.which == "curve":
        pairs = [r.load() for r in registry if r.paired]
        curve = heterogeneity_curve(pairs, levels=args.levels, gsd=args.gsd)
        write_rows(out / "curve.csv", ["level", "scale", "mean_ssim", "std_ssim"],
                   [[c["level"], c["scale"], c["mean_ssim"], c["std_ssim"]] for c in curve])
        svg.write(out / "curve.svg", svg.Chart("optical/SAR similarity vs resolution", "scale", "mean_ssim",
                                               [svg.Series("mean_ssim", [c["scale"] for c in curve],
                                                           [c["mean_ssim"] for c in curve])]))
        return dict(which="curve", levels=args.levels, gsd=args.gsd)
    if not args.checkpoint:
        raise UsageError(f"--which {args.which} needs --checkpoint")
    loaded = [load_model_checkpoint(p) for p in args.checkpoint]
    if args.which == "spectrum":
        series = []
        for i, (state, cfg, _) in enumerate(loaded):
            label = f"{variant_label(cfg)}-{i}" if len(loaded) > 1 else variant_label(cfg)
            feats = []
            for mod in ("optical", "sar"):
                imgs, _ = _stack(registry, stats, mod)
                if imgs is not None:
                    feats.append(token_embeddings(state, imgs, mod))
            rep = singular_spectrum(np.concatenate(feats), label=label)
            write_rows(out / f"spectrum_{label}.csv", ["variant", "index", "value", "effective_rank", "count", "width"],
                       [[label, k, float(v), rep.effective_rank, rep.count, rep.width]
                        for k, v in enumerate(rep.values)])
            series.append(svg.Series(label, list(range(1, len(rep.values) + 1)),
                                     [float(v) for v in rep.values]))
            print(f"{label}: effective rank {rep.effective_rank:.3f}")
        svg.write(out / "spectrum.svg", svg.Chart("singular value spectrum", "index", "normalized_singular_value",
                                                  series, log_y=True))
        return dict(which="spectrum", checkpoints=" ".join(args.checkpoint))
    state, cfg, _ = loaded[0]
    if args.which == "alignment":
        pairs = [r.load() for r in registry if r.paired]
        points = alignment_vs_heterogeneity(
            pairs, state, lambda img, pair, mod: normalize(img, stats, pair.dataset_id, mod))
        write_rows(out / "alignment.csv", ["sample_id", "patch_index", "ssim", "cosine"],
                   [[p.sample_id, p.patch_index, p.ssim, p.cosine] for p in points])
        rho = rank_correlation(points)
        (out / "alignment_summary.txt").write_text(f"spearman = {rho!r}\npoints = {len(points)}\n", encoding="utf-8")
        svg.write(out / "alignment.svg", svg.Chart("patch alignment vs heterogeneity", "ssim", "cosine", [
            svg.Series("patches", [p.ssim for p in points], [p.cosine for p in points], kind="scatter")]))
        print(f"spearman(ssim, cosine) = {rho:.4f} over {len(points)} patches")
        return dict(which="alignment")
    if args.which == "pca":
        rows, series = [], []
        feats, meta = [], []
        for mod in ("optical", "sar"):
            imgs, items = _stack(registry, stats, mod)
            if imgs is None:
                continue
            feats.append(pooled_features(state, imgs, mod))
            meta.extend((p.sample_id, mod, p.label) for p in items)
        proj = pca_project(np.concatenate(feats), 2)
        for (sid, mod, label), (a, b) in zip(meta, proj):
            rows.append([sid, mod, "-" if label is None else label, float(a), float(b)])
        write_rows(out / "pca.csv", ["sample_id", "modality", "label", "pc1", "pc2"], rows)
        for mod in ("optical", "sar"):
            sel = [r for r in rows if r[1] == mod]
            series.append(svg.Series(mod, [r[3] for r in sel], [r[4] for r in sel], kind="scatter"))
        svg.write(out / "pca.svg", svg.Chart("pooled embeddings, first two components", "pc1", "pc2", series))
        return dict(which="pca")
    raise UsageError(f"unknown --which {args.which!r}")


def cmd_probe(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    registry, stats = _dataset(args.data)
    labelled = [r for r in registry if r.label is not None]
    if not labelled:
        raise UsageError(f"{args.data} has no labelled samples")
    if args.checkpoint:
        state, cfg, _ = load_model_checkpoint(args.checkpoint)
        name = variant_label(cfg)
    else:
        cfg = cfgio.load(TrainConfig, args.config, args.set)
        state = init_model(cfg.model_config(), seed=cfg.seed)
        name = "random"
    rows = []
    for mod in ("optical", "sar"):
        imgs, items = _stack(labelled, stats, mod)
        if imgs is None:
            continue
        feats = pooled_features(state, imgs, mod)
        labels = np.array([p.label for p in items])
        accs = [linear_probe(feats, labels, ProbeConfig(seed=s)) for s in range(args.seeds)]
        rows.extend([name, mod, str(s), a] for s, a in enumerate(accs))
        rows.append([name, mod, "mean", float(np.mean(accs))])
        print(f"{name} {mod}: mean accuracy {np.mean(accs):.4f} over {args.seeds} seeds")
    write_rows(out / "probe.csv", ["encoder", "modality", "seed", "accuracy"], rows)
    return dict(seeds=args.seeds, checkpoint=args.checkpoint or "-")


def cmd_gradcheck(args) -> bool:
    results = run_suite(args.component, seeds=args.seeds)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {r.group:<9}  max_rel_err {r.max_rel_error:.3e}  tol {r.tol:.0e}  "
              f"{'PASS' if r.passed else 'FAIL'}  ({r.seconds:.2f}s)")
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return ok


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="codemae", description="Joint optical-SAR masked autoencoder pretraining toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a synthetic paired dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--scenes", type=int, default=64)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--unpaired-fraction", type=float, default=0.0)

    p = sub.add_parser("pretrain", help="train from a key=value config")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--resume", help="continue from a checkpoint written with the same config")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--verbose", action="store_true")

    d = sub.add_parser("diagnose", help="spectra, heterogeneity curve, alignment, PCA")
    d.add_argument("--checkpoint", action="append", default=[])
    d.add_argument("--data", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--which", required=True, choices=("spectrum", "curve", "alignment", "pca"))
    d.add_argument("--levels", type=int, default=4)
    d.add_argument("--gsd", type=float, default=1.0)

    q = sub.add_parser("probe", help="linear probe on frozen pooled features")
    q.add_argument("--checkpoint", help="omit to probe a freshly initialized encoder")
    q.add_argument("--config", help="model config for the random encoder")
    q.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    q.add_argument("--data", required=True)
    q.add_argument("--seeds", type=int, default=5)
    q.add_argument("--out", required=True)

    c = sub.add_parser("gradcheck", help="finite-difference gradient suite at 64-bit")
    c.add_argument("--component", default="all", choices=sorted(COMPONENTS))
    c.add_argument("--seeds", type=int, default=20)
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = _dt.datetime.now(_dt.timezone.utc)
    try:
        if args.command == "gen-data":
            snap = cmd_gen_data(args)
            write_manifest_file(Path(args.out), args.command, argv, None,
                                "".join(f"{k} = {v}\n" for k, v in snap.items()), started)
        elif args.command == "pretrain":
            cfg = cmd_pretrain(args)
            write_manifest_file(Path(args.out), args.command, argv, args.config, cfgio.dump(cfg), started)
        elif args.command == "diagnose":
            snap = cmd_diagnose(args)
            write_manifest_file(Path(args.out), args.command, argv, None,
                                "".join(f"{k} = {v}\n" for k, v in snap.items()), started)
        elif args.command == "probe":
            snap = cmd_probe(args)
            write_manifest_file(Path(args.out), args.command, argv, args.config,
                                "".join(f"{k} = {v}\n" for k, v in snap.items()), started)
        elif args.command == "gradcheck":
            return EXIT_OK if cmd_gradcheck(args) else EXIT_NUMERIC
    except (UsageError, cfgio.ConfigError) as exc:
        print(f"codemae: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalAbort, NonFiniteError, FloatingPointError) as exc:
        print(f"codemae: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IngestionError, ContainerError, OSError) as exc:
        print(f"codemae: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"codemae: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
