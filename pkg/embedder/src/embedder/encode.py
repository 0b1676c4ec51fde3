"""Encode every node of a study corpus with a pretrained language model.

Reads the recommender's dataset format (one JSON study per line), embeds
study texts (title + description) and the deduplicated problem /
intervention / outcome labels, and writes the embedding file format the
recommender loads: a ``dim=<D>`` header followed by one
``<kind>:<id or label>\\t<floats>`` row per node. The output is written
atomically (temp file, then rename).
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass

import numpy as np
import torch

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "bert-base-uncased"
POOLING_MODES = ("cls", "mean")


class EmbedderError(RuntimeError):
    pass


@dataclass
class EmbedJob:
    dataset: str
    out: str
    model: str = DEFAULT_MODEL
    pooling: str = "cls"
    batch_size: int = 16

    def validate(self) -> None:
        if self.pooling not in POOLING_MODES:
            raise EmbedderError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if self.batch_size < 1:
            raise EmbedderError("batch size must be positive")


def normalize_label(label: str) -> str:
    return label.strip().lower()


def read_nodes(dataset_path: str) -> list[tuple[str, str, str]]:
    """(kind, key, text) for every node, studies first, then sorted labels."""
    studies: list[tuple[str, str]] = []
    labels: dict[str, set[str]] = {"problem": set(), "intervention": set(), "outcome": set()}
    field_of = {"problem": "problems", "intervention": "interventions", "outcome": "outcomes"}
    seen_ids: set[str] = set()
    with open(dataset_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbedderError(f"{dataset_path}:{line_no}: malformed record ({exc.msg})") from exc
            study_id = record.get("id")
            if not isinstance(study_id, str) or not study_id.strip():
                raise EmbedderError(f"{dataset_path}:{line_no}: missing study id")
            if study_id in seen_ids:
                raise EmbedderError(f"{dataset_path}:{line_no}: duplicate study id {study_id!r}")
            seen_ids.add(study_id)
            text = f"{record.get('title', '')} {record.get('description', '')}".strip()
            studies.append((study_id, text))
            for kind, field in field_of.items():
                for raw in record.get(field, []):
                    norm = normalize_label(raw)
                    if norm:
                        labels[kind].add(norm)
    if not studies:
        raise EmbedderError(f"{dataset_path}: empty dataset")
    nodes = [("evidence", study_id, text) for study_id, text in studies]
    for kind in ("problem", "intervention", "outcome"):
        nodes.extend((kind, label, label) for label in sorted(labels[kind]))
    return nodes


class TextEncoder:
    """Pretrained transformer wrapper producing one vector per text."""

    def __init__(self, model_id: str, pooling: str):
        from transformers import AutoModel, AutoTokenizer

        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_id)
            self.model = AutoModel.from_pretrained(model_id)
        except Exception as exc:
            raise EmbedderError(f"cannot load model {model_id!r}: {exc}") from exc
        self.model.eval()
        self.pooling = pooling
        self.dim = int(self.model.config.hidden_size)
        limit = getattr(self.model.config, "max_position_embeddings", None)
        tok_limit = self.tokenizer.model_max_length
        candidates = [x for x in (limit, tok_limit) if isinstance(x, int) and 0 < x < 1_000_000]
        self.max_length = min(candidates) if candidates else 512

    def encode(self, texts: list[str], batch_size: int) -> np.ndarray:
        vectors = np.empty((len(texts), self.dim))
        warned = False
        for start in range(0, len(texts), batch_size):
            batch = texts[start : start + batch_size]
            if not warned:
                lengths = [len(self.tokenizer.tokenize(t)) for t in batch]
                if any(n + 2 > self.max_length for n in lengths):
                    logger.warning(
                        "text longer than the encoder limit (%d tokens), truncating", self.max_length
                    )
                    warned = True
            encoded = self.tokenizer(
                batch,
                return_tensors="pt",
                padding=True,
                truncation=True,
                max_length=self.max_length,
            )
            with torch.no_grad():
                hidden = self.model(**encoded).last_hidden_state
            if self.pooling == "cls":
                pooled = hidden[:, 0, :]
            else:
                mask = encoded["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)
            vectors[start : start + len(batch)] = pooled.double().numpy()
        return vectors


def write_rows(path: str, dim: int, rows: list[tuple[str, str, np.ndarray]]) -> None:
    """Write the embedding format atomically: temp file in place, then rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".embed-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(f"dim={dim}\n")
            for kind, key, vec in rows:
                fh.write(f"{kind}:{key}\t{' '.join(repr(float(v)) for v in vec)}\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def embed_corpus(job: EmbedJob) -> dict:
    """Run a job end to end and return a summary of what was written."""
    job.validate()
    nodes = read_nodes(job.dataset)
    encoder = TextEncoder(job.model, job.pooling)
    vectors = encoder.encode([text for _kind, _key, text in nodes], job.batch_size)
    if not np.all(np.isfinite(vectors)):
        raise EmbedderError("encoder produced non-finite values")
    rows = [(kind, key, vectors[i]) for i, (kind, key, _text) in enumerate(nodes)]
    write_rows(job.out, encoder.dim, rows)
    return {
        "out": job.out,
        "dim": encoder.dim,
        "rows": len(rows),
        "model": job.model,
        "pooling": job.pooling,
    }
