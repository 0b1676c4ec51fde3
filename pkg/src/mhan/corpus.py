"""Study corpus ingestion, node catalogs, and initial embeddings.

The dataset is one JSON object per line with a study id, title, description,
and its problem / intervention / outcome label lists. Labels are matched as
exact strings after trimming and lowercasing, and each catalog assigns
indices in sorted label order, so corpus construction is deterministic given
identical file bytes.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

import numpy as np

NODE_KINDS = ("evidence", "problem", "intervention", "outcome")

_TOKEN_RE = re.compile(r"[0-9a-z]+")


class CorpusError(ValueError):
    pass


class EmbeddingError(ValueError):
    pass


def normalize_label(label: str) -> str:
    return label.strip().lower()


@dataclass(frozen=True)
class Study:
    """One registered study with its element memberships."""

    id: str
    title: str
    description: str
    problems: tuple[str, ...]
    interventions: tuple[str, ...]
    outcomes: tuple[str, ...]

    @property
    def text(self) -> str:
        return f"{self.title} {self.description}".strip()


@dataclass(frozen=True)
class Corpus:
    """Ordered studies plus deduplicated, sorted element catalogs."""

    studies: tuple[Study, ...]
    problems: tuple[str, ...]
    interventions: tuple[str, ...]
    outcomes: tuple[str, ...]
    problem_index: dict[str, int] = field(repr=False)
    intervention_index: dict[str, int] = field(repr=False)
    outcome_index: dict[str, int] = field(repr=False)

    @property
    def num_evidence(self) -> int:
        return len(self.studies)

    def node_counts(self) -> dict[str, int]:
        return {
            "evidence": len(self.studies),
            "problem": len(self.problems),
            "intervention": len(self.interventions),
            "outcome": len(self.outcomes),
        }

    def catalog(self, kind: str) -> tuple[str, ...]:
        if kind == "problem":
            return self.problems
        if kind == "intervention":
            return self.interventions
        if kind == "outcome":
            return self.outcomes
        raise KeyError(f"no catalog for node kind {kind!r}")

    def node_text(self, kind: str, index: int) -> str:
        """Text used to embed a node: study title+description, or the label itself."""
        if kind == "evidence":
            return self.studies[index].text
        return self.catalog(kind)[index]

    def study_elements(self, study: Study) -> dict[str, tuple[int, ...]]:
        """Per-kind sorted distinct element indices referenced by a study."""
        return {
            "problem": tuple(sorted({self.problem_index[p] for p in study.problems})),
            "intervention": tuple(sorted({self.intervention_index[t] for t in study.interventions})),
            "outcome": tuple(sorted({self.outcome_index[o] for o in study.outcomes})),
        }

    def to_records(self) -> list[dict]:
        return [
            {
                "id": s.id,
                "title": s.title,
                "description": s.description,
                "problems": list(s.problems),
                "interventions": list(s.interventions),
                "outcomes": list(s.outcomes),
            }
            for s in self.studies
        ]


def _clean_labels(raw, field_name: str, line_no: int) -> tuple[str, ...]:
    if not isinstance(raw, list) or not all(isinstance(x, str) for x in raw):
        raise CorpusError(f"line {line_no}: {field_name} must be a list of strings")
    labels = []
    for x in raw:
        norm = normalize_label(x)
        if not norm:
            raise CorpusError(f"line {line_no}: empty label in {field_name}")
        labels.append(norm)
    # distinct within a study, original order kept for round-tripping
    return tuple(dict.fromkeys(labels))


def corpus_from_records(records, source: str = "<records>") -> Corpus:
    studies: list[Study] = []
    seen_ids: set[str] = set()
    for line_no, rec in enumerate(records, start=1):
        if not isinstance(rec, dict):
            raise CorpusError(f"line {line_no}: record is not a JSON object")
        try:
            study_id = rec["id"]
            title = rec["title"]
            description = rec["description"]
        except KeyError as exc:
            raise CorpusError(f"line {line_no}: missing field {exc.args[0]!r}") from exc
        if not isinstance(study_id, str) or not study_id.strip():
            raise CorpusError(f"line {line_no}: id must be a nonempty string")
        if study_id in seen_ids:
            raise CorpusError(f"line {line_no}: duplicate study id {study_id!r}")
        seen_ids.add(study_id)
        problems = _clean_labels(rec.get("problems", []), "problems", line_no)
        interventions = _clean_labels(rec.get("interventions", []), "interventions", line_no)
        outcomes = _clean_labels(rec.get("outcomes", []), "outcomes", line_no)
        if not (problems or interventions or outcomes):
            raise CorpusError(f"line {line_no}: study {study_id!r} references no elements")
        studies.append(
            Study(
                id=study_id,
                title=str(title),
                description=str(description),
                problems=problems,
                interventions=interventions,
                outcomes=outcomes,
            )
        )
    if not studies:
        raise CorpusError(f"{source}: empty dataset")

    problems = tuple(sorted({p for s in studies for p in s.problems}))
    interventions = tuple(sorted({t for s in studies for t in s.interventions}))
    outcomes = tuple(sorted({o for s in studies for o in s.outcomes}))
    return Corpus(
        studies=tuple(studies),
        problems=problems,
        interventions=interventions,
        outcomes=outcomes,
        problem_index={p: i for i, p in enumerate(problems)},
        intervention_index={t: i for i, t in enumerate(interventions)},
        outcome_index={o: i for i, o in enumerate(outcomes)},
    )


def load_corpus(path) -> Corpus:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: malformed JSON record ({exc.msg})") from exc
    return corpus_from_records(records, source=str(path))


def write_corpus(path, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus.to_records():
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")


@dataclass
class EmbeddingTable:
    """Per-node vectors for every node kind at one layer."""

    dim: int
    rows: dict[tuple[str, int], np.ndarray]
    layer: int = 0

    def get(self, kind: str, index: int) -> np.ndarray:
        return self.rows[(kind, index)]

    def matrix(self, kind: str, count: int) -> np.ndarray:
        """Dense (count, dim) matrix for one node kind, index order."""
        out = np.empty((count, self.dim))
        for i in range(count):
            out[i] = self.rows[(kind, i)]
        return out


def _node_keys(corpus: Corpus) -> list[tuple[str, str, int]]:
    keys = [("evidence", s.id, i) for i, s in enumerate(corpus.studies)]
    for kind in ("problem", "intervention", "outcome"):
        keys.extend((kind, label, i) for i, label in enumerate(corpus.catalog(kind)))
    return keys


def load_embeddings(path, corpus: Corpus) -> EmbeddingTable:
    """Read the embedding text format and check it covers every node.

    First line is ``dim=<D>``; each following line is
    ``<kind>:<id or label>\\t<v1> <v2> ... <vD>``.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        m = re.fullmatch(r"dim=(\d+)", header)
        if not m:
            raise EmbeddingError(f"bad header line {header!r}, expected dim=<D>")
        dim = int(m.group(1))
        if dim < 1:
            raise EmbeddingError("embedding dim must be positive")
        parsed: dict[tuple[str, str], np.ndarray] = {}
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            head, sep, payload = line.rstrip("\n").partition("\t")
            if not sep:
                raise EmbeddingError(f"line {line_no}: missing tab separator")
            kind, sep2, node_id = head.partition(":")
            if not sep2 or kind not in NODE_KINDS:
                raise EmbeddingError(f"line {line_no}: bad node key {head!r}")
            try:
                vec = np.array([float(x) for x in payload.split()], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingError(f"line {line_no}: unparsable float ({exc})") from exc
            if vec.shape[0] != dim:
                raise EmbeddingError(f"line {line_no}: expected {dim} values, found {vec.shape[0]}")
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError(f"line {line_no}: non-finite value for {head!r}")
            if (kind, node_id) in parsed:
                raise EmbeddingError(f"line {line_no}: duplicate row for {head!r}")
            parsed[(kind, node_id)] = vec

    rows: dict[tuple[str, int], np.ndarray] = {}
    for kind, key, index in _node_keys(corpus):
        vec = parsed.pop((kind, key), None)
        if vec is None:
            raise EmbeddingError(f"missing embedding for {kind}:{key}")
        rows[(kind, index)] = vec
    if parsed:
        oddball = next(iter(parsed))
        raise EmbeddingError(f"embedding row {oddball[0]}:{oddball[1]} matches no corpus node")
    return EmbeddingTable(dim=dim, rows=rows, layer=0)


def write_embeddings(path, corpus: Corpus, table: EmbeddingTable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={table.dim}\n")
        for kind, key, index in _node_keys(corpus):
            vec = table.rows[(kind, index)]
            fh.write(f"{kind}:{key}\t{' '.join(repr(float(v)) for v in vec)}\n")


def hash_embed(text: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic bag-of-words embedding used when no pretrained file exists.

    Tokens are lowercased alphanumeric runs; each token lands in a hashed
    bucket with a hashed +-1 sign, and the sum is L2-normalized. The result
    depends only on the token multiset. An empty token list gives all zeros.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    key = int(seed).to_bytes(8, "little", signed=True)
    vec = np.zeros(dim)
    for token in _TOKEN_RE.findall(text.lower()):
        digest = hashlib.blake2b(token.encode("utf-8"), key=key, digest_size=9).digest()
        bucket = int.from_bytes(digest[:8], "little") % dim
        sign = 1.0 if digest[8] % 2 == 0 else -1.0
        vec[bucket] += sign
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def fallback_embeddings(corpus: Corpus, dim: int = 768, seed: int = 2022) -> EmbeddingTable:
    """Hash-embed every node's text into a layer-0 table."""
    rows = {
        (kind, index): hash_embed(corpus.node_text(kind, index), dim, seed)
        for kind, _key, index in _node_keys(corpus)
    }
    return EmbeddingTable(dim=dim, rows=rows, layer=0)
