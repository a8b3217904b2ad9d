#!/usr/bin/env python3
"""Desk-scale architecture ablation: train every combination of feature
subset, branch-encoder preset, and fusion kind on one synthetic dataset and
print a ranked AUROC/F1 table.

Example:
    python scripts/run_ablation.py --n 1000 --separability 0.8 --seed 1
"""

import argparse
import itertools
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from haludet.metrics import evaluate_supervised
from haludet.model import ModelConfig, encoders_preset, score_dataset
from haludet.synth import SynthConfig, generate
from haludet.train import TrainConfig, train

FEATURE_SETS = [("ll",), ("ent",), ("emb",), ("ll", "ent"), ("ll", "emb"),
                ("ent", "emb"), ("ll", "ent", "emb")]
PRESETS = ("all-cnn", "mixed", "all-mlp")
FUSIONS = ("attention", "concat_mlp")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=1000, help="records per split")
    ap.add_argument("--d-emb", type=int, default=32, dest="d_emb")
    ap.add_argument("--separability", type=float, default=0.8)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--max-epochs", type=int, default=20, dest="max_epochs")
    args = ap.parse_args()

    train_ds = generate(SynthConfig(n_records=args.n, seed=args.seed,
                                    d_emb=args.d_emb, separability=args.separability))
    test_ds = generate(SynthConfig(n_records=args.n, seed=args.seed + 10_000,
                                   d_emb=args.d_emb, separability=args.separability))
    labels = test_ds.labels()

    rows = []
    t0 = time.time()
    for feats, preset, fusion in itertools.product(FEATURE_SETS, PRESETS, FUSIONS):
        if len(feats) == 1 and fusion == "attention":
            continue  # attention over one branch is the identity; skip duplicates
        mcfg = ModelConfig(d_emb=args.d_emb, features=feats,
                           encoders=encoders_preset(preset, feats), fusion=fusion)
        params, report = train(train_ds, mcfg,
                               TrainConfig(seed=args.seed, max_epochs=args.max_epochs))
        rep = evaluate_supervised(score_dataset(test_ds, params, mcfg), labels)
        rows.append(("+".join(feats), preset, fusion, rep.auroc, rep.f1_at_best,
                     report.best_epoch))
        print(f"done {rows[-1][0]:11s} {preset:8s} {fusion:10s} "
              f"auroc={rep.auroc:.4f} f1@b={rep.f1_at_best:.4f}", file=sys.stderr)

    rows.sort(key=lambda r: -r[3])
    print(f"\nseparability={args.separability}  n={args.n}  seed={args.seed}  "
          f"({time.time() - t0:.0f}s)")
    print(f"{'features':11s} {'encoder':8s} {'fusion':10s} {'auroc':>7s} "
          f"{'f1@b':>7s} {'best_ep':>7s}")
    for feats, preset, fusion, a, f1, best in rows:
        print(f"{feats:11s} {preset:8s} {fusion:10s} {a:7.4f} {f1:7.4f} {best:7d}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
