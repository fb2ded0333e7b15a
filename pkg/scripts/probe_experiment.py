"""Linear-probe accuracy of a pretrained encoder against an untrained one, per seed.

Usage: python scripts/probe_experiment.py [--variant full] [--seeds 5] [--epochs 50]
"""

import argparse
import dataclasses

import numpy as np

from codemae.experiments import VARIANTS, random_encoder_run, run_variant
from codemae.trainer import TrainConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--variant", default="full", choices=sorted(VARIANTS))
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--scenes", type=int, default=32)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--lr", type=float, default=1.5e-4)
    args = ap.parse_args()

    base = dataclasses.replace(TrainConfig(), num_scenes=args.scenes, epochs=args.epochs, base_lr=args.lr)
    gaps = []
    for seed in range(args.seeds):
        rnd = random_encoder_run(base, seed)
        run = run_variant(base, args.variant, seed)
        gap = {m: run.probe[m] - rnd.probe[m] for m in ("optical", "sar")}
        gaps.append(gap)
        print(f"seed {seed}: random opt {rnd.probe['optical']:.3f} sar {rnd.probe['sar']:.3f} | "
              f"{args.variant} opt {run.probe['optical']:.3f} sar {run.probe['sar']:.3f} | "
              f"gap {gap['optical']:+.3f} {gap['sar']:+.3f}", flush=True)
    for m in ("optical", "sar"):
        print(f"mean {m} gap {np.mean([g[m] for g in gaps]):+.3f}")


if __name__ == "__main__":
    main()
