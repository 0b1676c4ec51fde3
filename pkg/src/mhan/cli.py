"""Command-line client for the recommender service.

Each subcommand assembles a flat config from (defaults < config file < env
< flags) and posts it to the service: a remote one when ``--server`` is
given, otherwise an in-process instance of the same app, so single-machine
runs need no separate server. Responses print as JSON on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys

import httpx

ENDPOINTS = {
    "build-graphs": "/graphs/build",
    "embed-fallback": "/embeddings/fallback",
    "train": "/train",
    "evaluate": "/evaluate",
    "recommend": "/recommend",
    "experiment": "/experiment",
}

_FLAGS: list[tuple[str, type | None, str]] = [
    ("dataset", str, "dataset file, one JSON study per line"),
    ("embeddings", str, "pretrained embedding file; omit to hash-embed"),
    ("checkpoint", str, "checkpoint to load before evaluate/recommend"),
    ("out", str, "output directory (default $MHAN_OUT_DIR or ./mhan_out)"),
    ("seed", int, "run seed"),
    ("threshold", float, "text-similarity threshold for the text graph"),
    ("fusion", str, "fusion mechanism: adaptive | shared | fusional"),
    ("variant", str, "model variant: MHAN | CRec | URec | REeb"),
    ("epochs", int, "training epochs"),
    ("neg-k", int, "negatives sampled per positive"),
    ("k", int, "recommendation list length"),
    ("problem", str, "problem label to recommend for"),
    ("kind", str, "experiment kind: ablation | fusion | threshold | heads"),
    ("layers", int, "number of model layers"),
    ("hidden-dim", int, "hidden dimension"),
    ("hgt-heads", int, "heads in the co-reference channel"),
    ("gat-heads", int, "heads in the text channel"),
    ("fusional-heads", int, "heads in fusional attention"),
    ("lr", float, "learning rate"),
    ("split-ratio", float, "train fraction of problem edges"),
    ("similarity-normalization", str, "printed | shifted"),
    ("gat-mean", str, "text-channel mean mode: heads | neighbors"),
    ("ndcg-agg", str, "per_query_mean | global"),
    ("noise-dist", str, "negative sampling: uniform | popularity"),
    ("embed-dim", int, "fallback embedding dimension"),
    ("resume", str, "checkpoint to warm-start training from"),
]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat JSON config file; flags override it")
    parser.add_argument("--server", help="base URL of a running service; default runs in-process")
    for name, typ, help_text in _FLAGS:
        parser.add_argument(f"--{name}", type=typ, default=None, help=help_text)
    parser.add_argument(
        "--include-train",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="keep training positives among ranking candidates",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mhan",
        description="Clinical evidence recommendation over dual evidence graphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, help_text in [
        ("build-graphs", "construct both graphs and emit stats + dumps"),
        ("train", "train a model and write a checkpoint"),
        ("evaluate", "rank held-out links and report HR/NDCG"),
        ("recommend", "top-k evidence for one problem"),
        ("experiment", "run an experiment grid (--kind)"),
        ("embed-fallback", "write hash-based fallback embeddings"),
    ]:
        _add_common(sub.add_parser(command, help=help_text))
    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _collect_options(args: argparse.Namespace) -> dict:
    merged: dict = {}
    if args.config:
        from .config import load_config_file

        merged.update(load_config_file(args.config))
    for name, _typ, _help in _FLAGS + [("include-train", None, "")]:
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            merged[name.replace("-", "_")] = value
    return merged


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        # some starlette builds warn on import about their test client's
        # httpx coupling; irrelevant to the in-process transport use here
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app(), raise_server_exceptions=False)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0

    options = _collect_options(args)
    try:
        with _client(args.server) as client:
            response = client.post(ENDPOINTS[args.command], json=options)
    except httpx.HTTPError as exc:
        print(f"error: cannot reach service ({exc})", file=sys.stderr)
        return 1
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        print(f"error: {detail}", file=sys.stderr)
        return 1
    print(json.dumps(response.json(), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
