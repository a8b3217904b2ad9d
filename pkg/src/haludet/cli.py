"""Command-line surface: synthesize features, train, evaluate, score, and
verify gradients, all seeded and bit-reproducible.

Config precedence, highest first: checkpoint-embedded config, --config file,
flags, defaults. A checkpoint is self-describing, so at eval/score time its
embedded architecture always wins.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import baselines, metrics, model, synth
from .features import DatasetError, load_dataset, save_dataset
from .model import CheckpointError, ConfigError, ModelConfig
from .train import TrainConfig, TrainingDiverged, train as run_training

BASELINE_KINDS = ("pe", "tnll", "logistic")
GRADCHECK_TOLERANCE = 1e-4


def _parse_features(text: str) -> tuple[str, ...]:
    feats = tuple(f.strip() for f in text.split(",") if f.strip())
    if not feats:
        raise ConfigError("--features must name at least one of ll, ent, emb")
    return feats


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        cfg = json.load(f)
    if not isinstance(cfg, dict):
        raise ConfigError("--config file must hold a JSON object")
    return cfg


def _model_config(args, d_emb: int, l_max: int) -> ModelConfig:
    """defaults < flags < --config file (checkpoints override elsewhere)."""
    spec: dict = {"d_emb": d_emb, "l_max": l_max}
    if args.features is not None:
        spec["features"] = _parse_features(args.features)
    features = spec.get("features", model.FEATURE_NAMES)
    if args.encoder is not None:
        spec["encoders"] = model.encoders_preset(args.encoder, features)
    if args.fusion is not None:
        spec["fusion"] = "concat_mlp" if args.fusion == "concat" else args.fusion
    if args.pooling is not None:
        spec["pooling_masked"] = args.pooling == "masked"
    file_cfg = _load_config_file(args.config).get("model", {})
    file_cfg.pop("d_emb", None)  # the data dictates d_emb
    file_cfg.pop("l_max", None)
    if "features" in file_cfg:
        file_cfg["features"] = tuple(file_cfg["features"])
        if "encoders" not in file_cfg and args.encoder is not None:
            file_cfg["encoders"] = model.encoders_preset(args.encoder, file_cfg["features"])
    spec.update(file_cfg)
    if "encoders" not in spec and "features" in spec:
        spec["encoders"] = model.encoders_preset(args.encoder or "all-cnn", spec["features"])
    return ModelConfig(**spec)


def _train_config(args) -> TrainConfig:
    spec: dict = {"seed": args.seed}
    for flag, name in (("lr", "lr"), ("batch_size", "batch_size"),
                       ("max_epochs", "max_epochs"), ("patience", "patience"),
                       ("val_fraction", "val_fraction"), ("weight_decay", "weight_decay")):
        value = getattr(args, flag)
        if value is not None:
            spec[name] = value
    spec.update(_load_config_file(args.config).get("train", {}))
    spec["seed"] = args.seed if "seed" not in spec else spec["seed"]
    return TrainConfig(**spec)


def cmd_synth(args) -> int:
    cfg = synth.SynthConfig(
        n_records=args.n, seed=args.seed, d_emb=args.d_emb, l_max=args.l_max,
        separability=args.separability, hallucination_rate=args.rate,
    )
    ds = synth.generate(cfg)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} records (d_emb={ds.d_emb}, l_max={ds.l_max}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(args.data)
    if args.baseline == "logistic":
        lm = baselines.logistic_train(ds, seed=args.seed)
        lm.save(args.out)
        print(f"wrote logistic weights to {args.out}")
        return 0
    if args.baseline is not None:
        raise ConfigError(f"only the logistic baseline is trainable, not {args.baseline!r}")
    mcfg = _model_config(args, d_emb=ds.d_emb, l_max=ds.l_max)
    tcfg = _train_config(args)
    params, report = run_training(ds, mcfg, tcfg)
    model.save_checkpoint(params, mcfg, args.out)
    report_path = str(args.out) + ".train.txt"
    report.save(report_path)
    print(f"wrote checkpoint to {args.out} (best epoch {report.best_epoch}, "
          f"val AUROC {report.best_val_auroc:.4f}); report at {report_path}")
    return 0


def _eval_one(name: str, ids, labels, report: metrics.EvalReport,
              scores: np.ndarray, out_dir: Path) -> None:
    metrics.ScoredSet(ids, scores, labels).save(out_dir / f"{name}.scores.tsv")
    report.save(out_dir / f"{name}.report.json")
    report.save_curve(out_dir / f"{name}.curve.tsv")
    print(f"{name}\tauroc={report.auroc:.4f}\taurac={report.aurac:.4f}\t"
          f"ra@50={report.ra_at_50:.4f}\tf1@b={report.f1_at_best:.4f}")


def cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    labels = ds.labels()
    ids = ds.ids()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    wanted = tuple(b.strip() for b in args.baseline.split(",") if b.strip()) if args.baseline else ()
    for b in wanted:
        if b not in BASELINE_KINDS:
            raise ConfigError(f"unknown baseline {b!r} (choose from {BASELINE_KINDS})")
    if args.model is None and not wanted:
        raise ConfigError("nothing to evaluate: give --model and/or --baseline")

    if args.model is not None:
        params, mcfg = model.load_checkpoint(args.model)
        p = model.score_dataset(ds, params, mcfg)
        _eval_one("model", ids, labels, metrics.evaluate_supervised(p, labels), p, out_dir)

    for b in wanted:
        if b == "logistic":
            if args.logistic_model is not None:
                lm = baselines.LogisticModel.load(args.logistic_model)
            elif args.train_data is not None:
                lm = baselines.logistic_train(load_dataset(args.train_data), seed=args.seed)
            else:
                raise ConfigError("logistic baseline needs --train-data or --logistic-model")
            p = lm.score_dataset(ds)
            _eval_one(b, ids, labels, metrics.evaluate_supervised(p, labels), p, out_dir)
        else:
            raw = baselines.score_dataset(ds, b)
            _eval_one(b, ids, labels, metrics.evaluate_unsupervised(raw, labels), raw, out_dir)
    return 0


def cmd_score(args) -> int:
    params, mcfg = model.load_checkpoint(args.model)
    ds = load_dataset(args.data)
    p = model.score_dataset(ds, params, mcfg)
    for rid, pi in zip(ds.ids(), p):
        print(f"{rid}\t{float(pi)!r}\t{model.predict(pi)}")
    return 0


def cmd_gradcheck(args) -> int:
    worst_overall = 0.0
    configs = []
    for fusion in model.FUSION_KINDS:
        for preset in model.ENCODER_PRESETS:
            configs.append(ModelConfig(
                d_emb=3, features=model.FEATURE_NAMES,
                encoders=model.encoders_preset(preset, model.FEATURE_NAMES),
                fusion=fusion, l_max=7, d_conv=4, d_h=4, d_mlp=5, d_a=6,
            ))
    for i, cfg in enumerate(configs):
        errs = model.finite_difference_check(cfg, seed=args.seed + i)
        for name, err in sorted(errs.items()):
            enc = "+".join(sorted(set(cfg.encoders.values())))
            print(f"{cfg.fusion}/{enc}\t{name}\t{err:.3e}")
        worst_overall = max(worst_overall, max(errs.values()))
    print(f"max relative error: {worst_overall:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})")
    return 0 if worst_overall < GRADCHECK_TOLERANCE else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="haludet",
        description="Train, evaluate and apply a multi-branch hallucination "
                    "detector on token-level uncertainty features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature file")
    p.add_argument("--out", required=True, help="output feature file (HFJ v1)")
    p.add_argument("--n", type=int, default=1000, help="number of records")
    p.add_argument("--d-emb", type=int, default=32, dest="d_emb")
    p.add_argument("--l-max", type=int, default=50, dest="l_max")
    p.add_argument("--separability", type=float, default=1.0)
    p.add_argument("--rate", type=float, default=0.35, help="hallucination rate")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the detector (or the logistic baseline)")
    p.add_argument("--data", required=True, help="training feature file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--config", help="JSON file with 'model' and/or 'train' sections")
    p.add_argument("--features", help="comma list from ll,ent,emb")
    p.add_argument("--encoder", choices=model.ENCODER_PRESETS)
    p.add_argument("--fusion", choices=("attention", "concat"))
    p.add_argument("--pooling", choices=("masked", "unmasked"))
    p.add_argument("--baseline", help="train 'logistic' instead of the detector")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--val-fraction", type=float, dest="val_fraction")
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a feature file and write reports")
    p.add_argument("--data", required=True, help="test feature file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--model", help="detector checkpoint")
    p.add_argument("--baseline", help=f"comma list from {','.join(BASELINE_KINDS)}")
    p.add_argument("--train-data", dest="train_data",
                   help="training feature file for the logistic baseline")
    p.add_argument("--logistic-model", dest="logistic_model",
                   help="reuse logistic weights written by train --baseline logistic")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="print id, p, and the 0/1 decision per record")
    p.add_argument("--model", required=True, help="detector checkpoint")
    p.add_argument("--data", required=True, help="feature file to score")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        # downstream closed the pipe (score ... | head); exit quietly
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (DatasetError, ConfigError, CheckpointError, TrainingDiverged,
            metrics.MetricError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
