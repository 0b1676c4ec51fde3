"""CLI: embed a dataset into the portable embedding file format."""

from __future__ import annotations

import argparse
import json
import sys

from .encode import DEFAULT_MODEL, EmbedderError, EmbedJob, embed_corpus


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed",
        description="Embed every study and element label of a dataset with a pretrained encoder",
    )
    parser.add_argument("--dataset", required=True, help="dataset file, one JSON study per line")
    parser.add_argument("--out", required=True, help="embedding file to write")
    parser.add_argument("--model", default=DEFAULT_MODEL, help="model id or local model directory")
    parser.add_argument("--pooling", choices=("cls", "mean"), default="cls")
    parser.add_argument("--batch-size", type=int, default=16)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    job = EmbedJob(
        dataset=args.dataset,
        out=args.out,
        model=args.model,
        pooling=args.pooling,
        batch_size=args.batch_size,
    )
    try:
        summary = embed_corpus(job)
    except (EmbedderError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
