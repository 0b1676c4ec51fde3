"""Ranking metrics, the experiment grid runner, and report emission.

Hit rate counts held-out links whose evidence lands in the query problem's
top K, over the total number of held-out links. NDCG discounts each hit by
log2(rank + 1) and normalizes by the ideal ordering, averaged per query by
default. Rankings exclude each problem's training positives unless asked
otherwise, and ties break toward the lower evidence index so repeated runs
agree bitwise.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .corpus import Corpus, EmbeddingTable
from .graphs import build_ecg, build_etg, similarity_matrix
from .model import Mhan, ModelConfig, forward, make_variant, score_problem
from .training import EdgeSplit, TrainingConfig, split_edges, train

logger = logging.getLogger(__name__)

DEFAULT_KS = (3, 5, 7, 9)

EXPERIMENT_KINDS = ("ablation", "fusion", "threshold", "heads")
ABLATION_VARIANTS = ("REeb", "CRec", "URec", "MHAN")
FUSION_AXIS = ("adaptive", "shared", "fusional")
THRESHOLD_AXIS = tuple(round(0.1 * i, 1) for i in range(11))
HEADS_AXIS = (8, 16, 32)


@dataclass
class MetricReport:
    hr: dict[int, float]
    ndcg: dict[int, float]
    queries: int
    gt: int
    config: dict

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "metrics": {
                "hr": {str(k): v for k, v in self.hr.items()},
                "ndcg": {str(k): v for k, v in self.ndcg.items()},
            },
            "gt": self.gt,
            "queries": self.queries,
        }


@dataclass
class ExperimentGrid:
    kind: str
    axis: list
    cells: list[MetricReport]

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "axis": list(self.axis),
            "cells": [c.to_json_dict() for c in self.cells],
        }


def rank_for_problems(
    model: Mhan,
    problems,
    exclude: dict[int, set[int]],
    embeddings: EmbeddingTable | None = None,
) -> dict[int, list[int]]:
    """Full candidate ordering per problem, best first."""
    table = embeddings if embeddings is not None else forward(model)
    n_e = model.corpus.num_evidence
    he = table.matrix("evidence", n_e)
    rankings: dict[int, list[int]] = {}
    for p in problems:
        scores = score_problem(table.get("problem", p), he)
        banned = exclude.get(p, set())
        candidates = [i for i in range(n_e) if i not in banned]
        if not candidates:
            logger.info("problem %d: every candidate excluded, query skipped", p)
            continue
        candidates.sort(key=lambda i: (-scores[i], i))
        rankings[p] = candidates
    return rankings


def hit_rate_at_k(rankings: dict[int, list[int]], test: EdgeSplit, k: int) -> float:
    """Held-out links recommended in the top k, over all held-out links."""
    if k < 1:
        raise ValueError("k must be >= 1")
    by_problem = test.positives_by_problem("test")
    gt = sum(len(v) for v in by_problem.values())
    hits = 0
    for p, positives in by_problem.items():
        if p not in rankings:
            continue
        hits += len(positives.intersection(rankings[p][:k]))
    return hits / gt


def ndcg_at_k(
    rankings: dict[int, list[int]],
    test: EdgeSplit,
    k: int,
    agg: str = "per_query_mean",
) -> float:
    """Binary-relevance NDCG at k, per-query mean or globally pooled."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if agg not in ("per_query_mean", "global"):
        raise ValueError(f"unknown ndcg aggregation {agg!r}")
    by_problem = test.positives_by_problem("test")
    per_query: list[tuple[float, float]] = []  # (dcg, idcg)
    for p, positives in by_problem.items():
        if p not in rankings:
            continue
        dcg = 0.0
        for rank, e in enumerate(rankings[p][:k], start=1):
            if e in positives:
                dcg += 1.0 / math.log2(rank + 1)
        ideal_hits = min(k, len(positives))
        idcg = sum(1.0 / math.log2(r + 1) for r in range(1, ideal_hits + 1))
        per_query.append((dcg, idcg))
    if not per_query:
        raise ValueError("no queries with held-out positives")
    if agg == "global":
        total_idcg = sum(i for _d, i in per_query)
        return sum(d for d, _i in per_query) / total_idcg
    return sum(d / i for d, i in per_query) / len(per_query)


def evaluate(
    model: Mhan,
    split: EdgeSplit,
    ks=DEFAULT_KS,
    include_train: bool = False,
    ndcg_agg: str = "per_query_mean",
    config_echo: dict | None = None,
) -> MetricReport:
    test_by_problem = split.positives_by_problem("test")
    if not test_by_problem:
        raise ValueError("empty test set")
    exclude = {} if include_train else split.positives_by_problem("train")
    rankings = rank_for_problems(model, sorted(test_by_problem), exclude)
    gt = sum(len(v) for v in test_by_problem.values())
    return MetricReport(
        hr={k: hit_rate_at_k(rankings, split, k) for k in ks},
        ndcg={k: ndcg_at_k(rankings, split, k, agg=ndcg_agg) for k in ks},
        queries=len(rankings),
        gt=gt,
        config=dict(config_echo or {}),
    )


def _run_cell(
    corpus: Corpus,
    table: EmbeddingTable,
    model_config: ModelConfig,
    training_config: TrainingConfig,
    ks,
    ndcg_agg: str,
    cell_echo: dict,
) -> MetricReport:
    ecg = build_ecg(corpus)
    sim = similarity_matrix(table, corpus.num_evidence, model_config.similarity_normalization)
    etg = build_etg(sim, model_config.threshold)
    split = split_edges(ecg, training_config.split_ratio, training_config.seed)
    masked = ecg.drop_problem_pairs(split.test)
    model = make_variant(model_config, corpus, masked, etg, table)
    train(training_config, model, split)
    echo = dict(cell_echo)
    echo.update(
        {
            "seed": model_config.seed,
            "threshold": model_config.threshold,
            "variant": model_config.variant,
            "fusion": model_config.fusion,
            "fusional_heads": model_config.fusional_heads,
            "epochs": training_config.epochs,
        }
    )
    return evaluate(model, split, ks=ks, ndcg_agg=ndcg_agg, config_echo=echo)


def run_experiment(
    kind: str,
    corpus: Corpus,
    table: EmbeddingTable,
    model_config: ModelConfig,
    training_config: TrainingConfig,
    ks=DEFAULT_KS,
    ndcg_agg: str = "per_query_mean",
) -> ExperimentGrid:
    """Train one cell per axis value, everything else held at the base config."""
    if kind not in EXPERIMENT_KINDS:
        raise ValueError(f"unknown experiment kind {kind!r}")
    if kind == "ablation":
        axis = list(ABLATION_VARIANTS)
        configs = [replace(model_config, variant=v) for v in axis]
    elif kind == "fusion":
        axis = list(FUSION_AXIS)
        configs = [replace(model_config, fusion=f) for f in axis]
    elif kind == "threshold":
        axis = list(THRESHOLD_AXIS)
        configs = [replace(model_config, threshold=t) for t in axis]
    else:
        axis = list(HEADS_AXIS)
        configs = [replace(model_config, fusional_heads=n) for n in axis]
    cells = [
        _run_cell(corpus, table, cfg, training_config, ks, ndcg_agg, {"axis": value})
        for value, cfg in zip(axis, configs)
    ]
    return ExperimentGrid(kind=kind, axis=axis, cells=cells)


def render_metric_table(report: MetricReport) -> str:
    ks = sorted(report.hr)
    lines = []
    lines.append("metric  " + "".join(f"{'@' + str(k):>10}" for k in ks))
    lines.append("hr      " + "".join(f"{report.hr[k]:>10.4f}" for k in ks))
    lines.append("ndcg    " + "".join(f"{report.ndcg[k]:>10.4f}" for k in ks))
    lines.append(f"queries={report.queries} gt={report.gt}")
    echo = " ".join(f"{key}={report.config[key]}" for key in sorted(report.config))
    if echo:
        lines.append(echo)
    return "\n".join(lines) + "\n"


def render_grid_table(grid: ExperimentGrid) -> str:
    if not grid.cells:
        raise ValueError("empty experiment grid")
    ks = sorted(grid.cells[0].hr)
    header = f"{grid.kind:<12}" + "".join(f"{'hr@' + str(k):>10}" for k in ks)
    header += "".join(f"{'ndcg@' + str(k):>10}" for k in ks)
    lines = [header]
    for value, cell in zip(grid.axis, grid.cells):
        row = f"{value!s:<12}"
        row += "".join(f"{cell.hr[k]:>10.4f}" for k in ks)
        row += "".join(f"{cell.ndcg[k]:>10.4f}" for k in ks)
        lines.append(row)
    first = grid.cells[0].config
    echo_keys = [key for key in sorted(first) if key != "axis"]
    lines.append(" ".join(f"{key}={first[key]}" for key in echo_keys))
    return "\n".join(lines) + "\n"


def write_report(obj: MetricReport | ExperimentGrid, json_path, text_path) -> None:
    """Emit JSON plus an aligned text table; byte-identical on identical input."""
    if isinstance(obj, ExperimentGrid) and not obj.cells:
        raise ValueError("empty experiment grid")
    payload = obj.to_json_dict()
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    text = render_grid_table(obj) if isinstance(obj, ExperimentGrid) else render_metric_table(obj)
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(text)
