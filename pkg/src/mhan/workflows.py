"""End-to-end run orchestration behind the service endpoints.

Every workflow takes a RunConfig, performs file I/O under the config's
output directory, writes the effective config next to its outputs, and
returns a JSON-serializable summary. All outputs are deterministic
functions of the config and the input file bytes.
"""

from __future__ import annotations

import json
import os
from dataclasses import replace

from . import autodiff as ad
from .config import RunConfig, write_config_file
from .corpus import (
    Corpus,
    EmbeddingTable,
    fallback_embeddings,
    load_corpus,
    load_embeddings,
    normalize_label,
    write_embeddings,
)
from .evaluation import evaluate, run_experiment, write_report
from .graphs import build_ecg, build_etg, build_ueg, graph_stats, similarity_matrix
from .model import Mhan, forward, make_variant, ranking_to_json, recommend_topk
from .training import EdgeSplit, split_edges, train, write_loss_trace


class WorkflowError(ValueError):
    pass


def _require(cfg: RunConfig, *fields: str) -> None:
    for name in fields:
        if getattr(cfg, name) in (None, ""):
            raise WorkflowError(f"missing required setting: {name.replace('_', '-')}")


def _out_dir(cfg: RunConfig) -> str:
    path = cfg.out_dir()
    os.makedirs(path, exist_ok=True)
    return path


def _write_effective_config(cfg: RunConfig, out: str) -> str:
    path = os.path.join(out, "config.json")
    write_config_file(path, replace(cfg, out=out))
    return path


def _load_inputs(cfg: RunConfig) -> tuple[Corpus, EmbeddingTable]:
    corpus = load_corpus(cfg.dataset)
    if cfg.embeddings:
        table = load_embeddings(cfg.embeddings, corpus)
    else:
        table = fallback_embeddings(corpus, dim=cfg.embed_dim, seed=cfg.seed)
    return corpus, table


def _build_model(cfg: RunConfig, corpus: Corpus, table: EmbeddingTable):
    ecg = build_ecg(corpus)
    sim = similarity_matrix(table, corpus.num_evidence, cfg.similarity_normalization)
    etg = build_etg(sim, cfg.threshold)
    split = split_edges(ecg, cfg.split_ratio, cfg.seed)
    masked = ecg.drop_problem_pairs(split.test)
    model = make_variant(cfg.model_config(), corpus, masked, etg, table)
    return ecg, etg, split, model


def _dump_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def build_graphs_workflow(cfg: RunConfig) -> dict:
    """Construct both graphs, dump them, and emit dataset-summary stats."""
    _require(cfg, "dataset")
    out = _out_dir(cfg)
    corpus, table = _load_inputs(cfg)
    ecg = build_ecg(corpus)
    sim = similarity_matrix(table, corpus.num_evidence, cfg.similarity_normalization)
    etg = build_etg(sim, cfg.threshold)
    ueg = build_ueg(ecg, etg)
    stats = graph_stats(ecg, etg)
    files = {
        "config": _write_effective_config(cfg, out),
        "ecg": os.path.join(out, "graph_ecg.json"),
        "etg": os.path.join(out, "graph_etg.json"),
        "ueg": os.path.join(out, "graph_ueg.json"),
        "stats": os.path.join(out, "stats.json"),
        "stats_table": os.path.join(out, "stats.txt"),
    }
    _dump_json(files["ecg"], ecg.dump())
    _dump_json(files["etg"], etg.dump())
    _dump_json(files["ueg"], ueg.dump())
    _dump_json(files["stats"], stats)
    with open(files["stats_table"], "w", encoding="utf-8") as fh:
        fh.write(_render_stats(stats))
    return {"stats": stats, "files": files}


def _render_stats(stats: dict) -> str:
    nodes = stats["nodes"]
    edges = stats["ecg_edges"]
    lines = [
        "nodes    " + "".join(f"{k:>14}" for k in nodes),
        "         " + "".join(f"{v:>14}" for v in nodes.values()),
        "edges    " + "".join(f"{k:>16}" for k in edges) + f"{'related':>16}",
        "         " + "".join(f"{v:>16}" for v in edges.values()) + f"{stats['etg_related']:>16}",
        f"threshold={stats['threshold']}",
    ]
    return "\n".join(lines) + "\n"


def embed_fallback_workflow(cfg: RunConfig) -> dict:
    """Hash-embed every node of a dataset into the embedding file format."""
    _require(cfg, "dataset")
    out = _out_dir(cfg)
    corpus = load_corpus(cfg.dataset)
    table = fallback_embeddings(corpus, dim=cfg.embed_dim, seed=cfg.seed)
    files = {
        "config": _write_effective_config(cfg, out),
        "embeddings": os.path.join(out, "fallback_embeddings.txt"),
    }
    write_embeddings(files["embeddings"], corpus, table)
    return {
        "files": files,
        "dim": table.dim,
        "rows": len(table.rows),
    }


def train_workflow(cfg: RunConfig) -> dict:
    _require(cfg, "dataset")
    out = _out_dir(cfg)
    corpus, table = _load_inputs(cfg)
    _ecg, _etg, split, model = _build_model(cfg, corpus, table)
    if cfg.resume:
        payload = ad.load_checkpoint(cfg.resume)
        model.store.load_values(payload["params"])
    _values, trace = train(cfg.training_config(), model, split)
    files = {
        "config": _write_effective_config(cfg, out),
        "checkpoint": os.path.join(out, "checkpoint.json"),
        "loss_trace": os.path.join(out, "loss_trace.csv"),
    }
    ad.save_checkpoint(files["checkpoint"], model.store, replace(cfg, out=out).to_flag_dict())
    write_loss_trace(files["loss_trace"], trace)
    return {
        "files": files,
        "epochs_run": len(trace),
        "final_loss": trace[-1] if trace else None,
        "train_positives": len(split.train),
        "test_positives": len(split.test),
    }


def _restore_model(cfg: RunConfig) -> tuple[Corpus, Mhan, EdgeSplit]:
    corpus, table = _load_inputs(cfg)
    _ecg, _etg, split, model = _build_model(cfg, corpus, table)
    if cfg.checkpoint:
        payload = ad.load_checkpoint(cfg.checkpoint)
        model.store.load_values(payload["params"])
    return corpus, model, split


def evaluate_workflow(cfg: RunConfig) -> dict:
    _require(cfg, "dataset")
    out = _out_dir(cfg)
    _corpus, model, split = _restore_model(cfg)
    echo = {key: value for key, value in replace(cfg, out=out).to_flag_dict().items() if value is not None}
    report = evaluate(
        model,
        split,
        include_train=cfg.include_train,
        ndcg_agg=cfg.ndcg_agg,
        config_echo=echo,
    )
    files = {
        "config": _write_effective_config(cfg, out),
        "metrics": os.path.join(out, "metrics.json"),
        "metrics_table": os.path.join(out, "metrics.txt"),
    }
    write_report(report, files["metrics"], files["metrics_table"])
    return {"report": report.to_json_dict(), "files": files}


def recommend_workflow(cfg: RunConfig) -> dict:
    _require(cfg, "dataset", "problem")
    out = _out_dir(cfg)
    corpus, model, split = _restore_model(cfg)
    label = normalize_label(cfg.problem)
    if label not in corpus.problem_index:
        raise WorkflowError(f"unknown problem label {cfg.problem!r}")
    p_idx = corpus.problem_index[label]
    exclude = set() if cfg.include_train else split.positives_by_problem("train").get(p_idx, set())
    ranking = recommend_topk(model, p_idx, cfg.k, exclude=exclude, embeddings=forward(model))
    payload = ranking_to_json(model, ranking)
    files = {
        "config": _write_effective_config(cfg, out),
        "ranking": os.path.join(out, "ranking.json"),
    }
    _dump_json(files["ranking"], payload)
    return {"ranking": payload, "files": files}


def experiment_workflow(cfg: RunConfig) -> dict:
    _require(cfg, "dataset", "kind")
    out = _out_dir(cfg)
    corpus, table = _load_inputs(cfg)
    grid = run_experiment(
        cfg.kind,
        corpus,
        table,
        cfg.model_config(),
        cfg.training_config(),
        ndcg_agg=cfg.ndcg_agg,
    )
    files = {
        "config": _write_effective_config(cfg, out),
        "grid": os.path.join(out, "grid.json"),
        "grid_table": os.path.join(out, "grid.txt"),
    }
    write_report(grid, files["grid"], files["grid_table"])
    return {"grid": grid.to_json_dict(), "files": files}
