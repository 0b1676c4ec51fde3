"""Evidence graph construction.

Two graphs are built from a corpus: a heterogeneous co-reference graph
linking each study to the problem / intervention / outcome labels it
references (with tagged inverse edges so messages flow both ways), and a
homogeneous text graph linking studies whose embedding similarity clears a
threshold. The unified variant folds the text edges into the co-reference
graph under a "similar" relation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .corpus import Corpus, EmbeddingTable

FORWARD_RELATIONS = ("hasProblem", "hasIntervention", "hasOutcome")
INVERSE_PREFIX = "rev_"
SIMILAR_RELATION = "similar"

# (relation, source kind, target kind); fixed order keeps reductions deterministic
RELATION_KINDS: dict[str, tuple[str, str]] = {
    "hasProblem": ("evidence", "problem"),
    "hasIntervention": ("evidence", "intervention"),
    "hasOutcome": ("evidence", "outcome"),
    "rev_hasProblem": ("problem", "evidence"),
    "rev_hasIntervention": ("intervention", "evidence"),
    "rev_hasOutcome": ("outcome", "evidence"),
    "similar": ("evidence", "evidence"),
}


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class EcgGraph:
    """Typed node index sets plus per-relation directed edge arrays."""

    node_counts: dict[str, int]
    edges: dict[str, tuple[np.ndarray, np.ndarray]]  # relation -> (src idx, dst idx)

    @property
    def relations(self) -> tuple[str, ...]:
        return tuple(self.edges)

    def edge_count(self, relation: str) -> int:
        src, _dst = self.edges[relation]
        return int(src.shape[0])

    def forward_edge_counts(self) -> dict[str, int]:
        return {rel: self.edge_count(rel) for rel in self.edges if not rel.startswith(INVERSE_PREFIX)}

    def problem_pairs(self) -> list[tuple[int, int]]:
        """All (problem idx, evidence idx) memberships, deterministic order."""
        src, dst = self.edges["hasProblem"]
        return [(int(p), int(e)) for e, p in zip(src, dst)]

    def drop_problem_pairs(self, pairs) -> "EcgGraph":
        """Copy with the given (problem, evidence) pairs removed from both
        the forward and inverse hasProblem relations."""
        drop = set(pairs)
        src, dst = self.edges["hasProblem"]
        keep = np.array([(int(p), int(e)) not in drop for e, p in zip(src, dst)], dtype=bool)
        edges = dict(self.edges)
        edges["hasProblem"] = (src[keep], dst[keep])
        rsrc, rdst = self.edges["rev_hasProblem"]
        rkeep = np.array([(int(p), int(e)) not in drop for p, e in zip(rsrc, rdst)], dtype=bool)
        edges["rev_hasProblem"] = (rsrc[rkeep], rdst[rkeep])
        return replace(self, edges=edges)

    def dump(self) -> dict:
        kinds = RELATION_KINDS
        edges = []
        for rel, (src, dst) in self.edges.items():
            sk, dk = kinds[rel]
            edges.extend([sk, int(s), rel, dk, int(d)] for s, d in zip(src, dst))
        return {"nodes": dict(self.node_counts), "edges": edges, "threshold": None}


@dataclass(frozen=True)
class EtgGraph:
    """Undirected similarity graph over evidence, stored as directed arcs.

    Every node carries a self-loop; each related pair appears as two arcs.
    """

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    threshold: float

    def related_pairs(self) -> set[tuple[int, int]]:
        """Undirected non-self-loop pairs as (i, j) with i < j."""
        pairs = set()
        for s, d in zip(self.src, self.dst):
            if s != d:
                pairs.add((min(int(s), int(d)), max(int(s), int(d))))
        return pairs

    def dump(self) -> dict:
        edges = [["evidence", int(s), SIMILAR_RELATION, "evidence", int(d)] for s, d in zip(self.src, self.dst)]
        return {"nodes": {"evidence": self.num_nodes}, "edges": edges, "threshold": self.threshold}


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise text similarity over evidence with the distance extrema used
    to normalize it. The diagonal is excluded from the extrema and is not an
    edge candidate."""

    values: np.ndarray
    dist_min: float
    dist_max: float


def build_ecg(corpus: Corpus) -> EcgGraph:
    counts = corpus.node_counts()
    per_relation: dict[str, tuple[list[int], list[int]]] = {
        rel: ([], []) for rel in FORWARD_RELATIONS
    }
    kind_of = {"hasProblem": "problem", "hasIntervention": "intervention", "hasOutcome": "outcome"}
    for e_idx, study in enumerate(corpus.studies):
        elements = corpus.study_elements(study)
        for rel in FORWARD_RELATIONS:
            src, dst = per_relation[rel]
            for el_idx in elements[kind_of[rel]]:
                src.append(e_idx)
                dst.append(el_idx)
    edges: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for rel in FORWARD_RELATIONS:
        src, dst = per_relation[rel]
        edges[rel] = (np.asarray(src, dtype=np.intp), np.asarray(dst, dtype=np.intp))
    for rel in FORWARD_RELATIONS:
        src, dst = edges[rel]
        edges[INVERSE_PREFIX + rel] = (dst.copy(), src.copy())
    return EcgGraph(node_counts=counts, edges=edges)


def similarity_matrix(
    table: EmbeddingTable,
    num_evidence: int,
    normalization: str = "printed",
) -> SimilarityMatrix:
    """Similarity of every evidence pair from Euclidean embedding distance.

    ``printed`` divides the raw distance by the extrema spread; ``shifted``
    subtracts the minimum first, which pins similarities into [0, 1]. When
    all distances coincide every pair has similarity 1.
    """
    if num_evidence < 2:
        raise GraphError("similarity requires at least 2 evidence nodes")
    if normalization not in ("printed", "shifted"):
        raise GraphError(f"unknown similarity normalization {normalization!r}")
    H = table.matrix("evidence", num_evidence)
    sq = np.sum(H * H, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (H @ H.T)
    np.maximum(d2, 0.0, out=d2)
    dist = np.sqrt(d2)
    dist = (dist + dist.T) / 2.0  # enforce exact symmetry
    off = ~np.eye(num_evidence, dtype=bool)
    dmin = float(dist[off].min())
    dmax = float(dist[off].max())
    if dmax == dmin:
        values = np.ones((num_evidence, num_evidence))
    elif normalization == "printed":
        values = 1.0 - dist / (dmax - dmin)
    else:
        values = 1.0 - (dist - dmin) / (dmax - dmin)
    return SimilarityMatrix(values=values, dist_min=dmin, dist_max=dmax)


def build_etg(sim: SimilarityMatrix, threshold: float) -> EtgGraph:
    if not (0.0 <= threshold <= 1.0):
        raise GraphError(f"threshold must lie in [0, 1], got {threshold}")
    n = sim.values.shape[0]
    src: list[int] = []
    dst: list[int] = []
    for i in range(n):
        for j in range(n):
            if i != j and sim.values[i, j] >= threshold:
                src.append(i)
                dst.append(j)
    src.extend(range(n))
    dst.extend(range(n))
    return EtgGraph(
        num_nodes=n,
        src=np.asarray(src, dtype=np.intp),
        dst=np.asarray(dst, dtype=np.intp),
        threshold=float(threshold),
    )


def build_ueg(ecg: EcgGraph, etg: EtgGraph) -> EcgGraph:
    """Co-reference graph plus a "similar" relation carrying the text arcs
    (self-loops excluded)."""
    if etg.num_nodes != ecg.node_counts["evidence"]:
        raise GraphError(
            f"graph corpus mismatch: {etg.num_nodes} text nodes vs "
            f"{ecg.node_counts['evidence']} evidence nodes"
        )
    keep = etg.src != etg.dst
    edges = dict(ecg.edges)
    edges[SIMILAR_RELATION] = (etg.src[keep].copy(), etg.dst[keep].copy())
    return EcgGraph(node_counts=dict(ecg.node_counts), edges=edges)


def graph_stats(ecg: EcgGraph, etg: EtgGraph) -> dict:
    """Node and edge tallies in the shape of the dataset summary tables."""
    return {
        "nodes": dict(ecg.node_counts),
        "ecg_edges": ecg.forward_edge_counts(),
        "etg_related": len(etg.related_pairs()),
        "threshold": etg.threshold,
    }
