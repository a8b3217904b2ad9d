"""Command line for the feature extractor."""

from __future__ import annotations

import argparse
import sys

from .extract import ExtractionError, extract_with_model
from .runtime import ModelAccessError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hfj-extract",
        description="Generate answers with a causal LM and write token-level "
                    "uncertainty features (HFJ v1).")
    parser.add_argument("--prompts", required=True,
                        help="JSONL rows: id, question, label, optional context")
    parser.add_argument("--out", required=True, help="output HFJ file")
    parser.add_argument("--model-id", required=True, dest="model_id",
                        help="Hugging Face model id or local path")
    parser.add_argument("--layer", type=int, default=20,
                        help="hidden-state layer index (0 = embeddings)")
    parser.add_argument("--temperature", type=float, default=0.1)
    parser.add_argument("--context-prob", type=float, default=0.5, dest="context_prob")
    parser.add_argument("--l-max", type=int, default=50, dest="l_max")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--greedy", action="store_true",
                        help="argmax decoding instead of temperature sampling")
    parser.add_argument("--tokenizer", choices=("auto", "byte"), default="auto",
                        help="byte = offline UTF-8 byte fallback")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--entropy-after-temperature", action="store_true",
                        dest="entropy_after_temperature",
                        help="record entropy of the temperature-scaled "
                             "distribution instead of the raw one")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        n = extract_with_model(
            args.prompts, args.out, args.model_id, layer_index=args.layer,
            temperature=args.temperature, context_prob=args.context_prob,
            seed=args.seed, l_max=args.l_max, greedy=args.greedy,
            tokenizer_kind=args.tokenizer, device=args.device,
            entropy_after_temperature=args.entropy_after_temperature)
    except (ExtractionError, ModelAccessError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {n} records to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
