"""Layer assembly, scoring, and top-k recommendation.

A model owns frozen graphs, layer-0 embeddings, and a parameter store. Each
layer runs the heterogeneous channel over the co-reference (or unified)
graph and, for the two-channel variants, the homogeneous channel over the
text graph; the evidence rows of the two outputs are fused and feed both
channels at the next layer, while element rows come straight from the
heterogeneous channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import channels, fusion
from .autodiff import ParamStore, Tensor
from .corpus import Corpus, EmbeddingTable
from .graphs import EcgGraph, EtgGraph, build_ueg

VARIANTS = ("MHAN", "CRec", "URec", "REeb")
FUSION_KINDS = ("adaptive", "shared", "fusional")


@dataclass
class ModelConfig:
    layers: int = 2
    hidden_dim: int = 256
    hgt_heads: int = 4
    gat_heads: int = 4
    fusional_heads: int = 16
    fusion: str = "fusional"
    variant: str = "MHAN"
    threshold: float = 0.8
    seed: int = 2022
    similarity_normalization: str = "printed"
    gat_mean: str = "heads"
    rand_embed_dim: int = 768

    def validate(self) -> None:
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.hidden_dim < 1 or self.hgt_heads < 1 or self.gat_heads < 1 or self.fusional_heads < 1:
            raise ValueError("dims and head counts must be positive")
        if self.hidden_dim % self.hgt_heads:
            raise ValueError(f"hidden dim {self.hidden_dim} not divisible by hgt heads {self.hgt_heads}")
        if self.hidden_dim % self.gat_heads:
            raise ValueError(f"hidden dim {self.hidden_dim} not divisible by gat heads {self.gat_heads}")
        if self.hidden_dim % self.fusional_heads:
            raise ValueError(
                f"hidden dim {self.hidden_dim} not divisible by fusional heads {self.fusional_heads}"
            )
        if self.fusion not in FUSION_KINDS:
            raise ValueError(f"unknown fusion kind {self.fusion!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")


@dataclass
class Ranking:
    problem: int
    items: list[tuple[int, float]]  # (evidence index, score), descending
    excluded: frozenset[int]


@dataclass
class Mhan:
    config: ModelConfig
    corpus: Corpus
    channel_graph: EcgGraph  # co-reference graph, or unified for URec
    etg: EtgGraph | None
    h0: dict[str, np.ndarray]
    store: ParamStore
    hgt_layers: list[channels.HgtParams] = field(default_factory=list)
    gat_layers: list[channels.GatParams] = field(default_factory=list)
    fusion_layers: list = field(default_factory=list)

    @property
    def two_channel(self) -> bool:
        return self.config.variant in ("MHAN", "REeb")

    def input_dim(self) -> int:
        return next(iter(self.h0.values())).shape[1]


def _h0_from_table(corpus: Corpus, table: EmbeddingTable) -> dict[str, np.ndarray]:
    counts = corpus.node_counts()
    return {kind: table.matrix(kind, n) for kind, n in counts.items() if n > 0}


def _random_h0(corpus: Corpus, dim: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    counts = corpus.node_counts()
    return {kind: rng.uniform(-0.1, 0.1, size=(n, dim)) for kind, n in counts.items() if n > 0}


def make_variant(
    config: ModelConfig,
    corpus: Corpus,
    ecg: EcgGraph,
    etg: EtgGraph,
    table: EmbeddingTable,
) -> Mhan:
    """Build one of the four model variants over prebuilt graphs.

    MHAN and REeb are two-channel with fusion (REeb swaps the initial
    embeddings for seeded uniform noise); CRec keeps only the co-reference
    channel; URec keeps one channel over the unified graph.
    """
    config.validate()
    if config.variant == "REeb":
        h0 = _random_h0(corpus, config.rand_embed_dim, config.seed)
    else:
        h0 = _h0_from_table(corpus, table)
    channel_graph = build_ueg(ecg, etg) if config.variant == "URec" else ecg
    store = ParamStore(config.seed)
    model = Mhan(
        config=config,
        corpus=corpus,
        channel_graph=channel_graph,
        etg=etg,
        h0=h0,
        store=store,
    )
    d_in = model.input_dim()
    kinds = {k: n for k, n in corpus.node_counts().items() if n > 0}
    relations = channel_graph.relations
    for layer in range(1, config.layers + 1):
        layer_in = d_in if layer == 1 else config.hidden_dim
        model.hgt_layers.append(
            channels.init_hgt_params(
                store,
                f"hgt.{layer}",
                kinds,
                relations,
                layer_in,
                config.hidden_dim,
                config.hgt_heads,
                resize_residual=layer_in != config.hidden_dim,
            )
        )
        if model.two_channel:
            model.gat_layers.append(
                channels.init_gat_params(store, f"gat.{layer}", layer_in, config.hidden_dim, config.gat_heads)
            )
            if config.fusion == "adaptive":
                model.fusion_layers.append(
                    fusion.init_adaptive_params(store, f"fusion.{layer}", config.hidden_dim)
                )
            elif config.fusion == "shared":
                model.fusion_layers.append(
                    fusion.init_shared_params(
                        store, f"fusion.{layer}", corpus.num_evidence, config.hidden_dim
                    )
                )
            else:
                model.fusion_layers.append(
                    fusion.init_fusional_params(store, f"fusion.{layer}", config.hidden_dim, config.fusional_heads)
                )
    return model


def forward_tensors(model: Mhan) -> dict[str, Tensor]:
    """Run all layers and return the final per-kind embedding tensors."""
    h: dict[str, Tensor] = {k: ad.const(v) for k, v in model.h0.items()}
    for layer in range(model.config.layers):
        hgt_out = channels.hgt_layer(model.channel_graph, h, model.hgt_layers[layer])
        new_h = dict(hgt_out.embeddings)
        if model.two_channel:
            gat_out = channels.gat_layer(
                model.etg, h["evidence"], model.gat_layers[layer], mean_mode=model.config.gat_mean
            )
            hc = hgt_out.embeddings["evidence"]
            ht = gat_out.embeddings["evidence"]
            kind = model.config.fusion
            if kind == "adaptive":
                new_h["evidence"] = fusion.adaptive_fuse(hc, ht, model.fusion_layers[layer])
            elif kind == "shared":
                new_h["evidence"] = fusion.shared_matrix_fuse(hc, ht, model.fusion_layers[layer].gate())
            else:
                new_h["evidence"] = fusion.fusional_attention(hc, ht, model.fusion_layers[layer])
        h = new_h
    return h


def structurally_dead_params(model: Mhan) -> set[str]:
    """Final-layer parameter names that no training loss can ever reach.

    The score reads only problem and evidence rows of the last layer, so
    last-layer sub-modules whose sole effect is on intervention / outcome
    rows (their query, output projection, and the attention / message /
    prior entries of the relations targeting them) receive zero gradient by
    construction. Every other parameter must train.
    """
    last = model.config.layers
    if last == 0:
        return set(model.store.names())
    prefixes = []
    for kind in ("intervention", "outcome"):
        prefixes.append(f"hgt.{last}.query.{kind}.")
        prefixes.append(f"hgt.{last}.out.{kind}.")
    for rel in ("hasIntervention", "hasOutcome"):
        prefixes.append(f"hgt.{last}.att.{rel}.")
        prefixes.append(f"hgt.{last}.msg.{rel}.")
        prefixes.append(f"hgt.{last}.prior.{rel}")
    return {name for name in model.store.names() if name.startswith(tuple(prefixes))}


def forward(model: Mhan) -> EmbeddingTable:
    """Final-layer embeddings as a plain table covering every node kind."""
    tensors = forward_tensors(model)
    rows: dict[tuple[str, int], np.ndarray] = {}
    dim = None
    for kind, tensor in tensors.items():
        arr = tensor.value
        dim = arr.shape[1]
        for i in range(arr.shape[0]):
            rows[(kind, i)] = arr[i].copy()
    return EmbeddingTable(dim=int(dim), rows=rows, layer=model.config.layers)


def score(hp: np.ndarray, he: np.ndarray) -> float:
    """Relevance of an evidence vector to a problem vector: sigmoid of dot."""
    hp = np.asarray(hp, dtype=np.float64)
    he = np.asarray(he, dtype=np.float64)
    if hp.shape != he.shape or hp.ndim != 1:
        raise ValueError(f"score expects equal-length vectors, got {hp.shape} and {he.shape}")
    x = float(hp @ he)
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return float(e / (1.0 + e))


def score_problem(
    problem_vec: np.ndarray, evidence_matrix: np.ndarray
) -> np.ndarray:
    """Vectorized sigmoid(problem . evidence) over all evidence rows."""
    x = evidence_matrix @ problem_vec
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def recommend_topk(
    model: Mhan,
    problem: int,
    k: int,
    exclude: set[int] | frozenset[int] = frozenset(),
    embeddings: EmbeddingTable | None = None,
) -> Ranking:
    """Top-k evidence for a problem by descending score.

    Ties break toward the lower evidence index. ``exclude`` removes
    candidates (typically the problem's training positives). A precomputed
    final-layer table may be passed to amortize the forward pass.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n_problems = len(model.corpus.problems)
    if not 0 <= problem < n_problems:
        raise ValueError(f"unknown problem index {problem}")
    table = embeddings if embeddings is not None else forward(model)
    n_e = model.corpus.num_evidence
    hp = table.get("problem", problem)
    he = table.matrix("evidence", n_e)
    scores = score_problem(hp, he)
    candidates = [i for i in range(n_e) if i not in exclude]
    candidates.sort(key=lambda i: (-scores[i], i))
    return Ranking(
        problem=problem,
        items=[(i, float(scores[i])) for i in candidates[:k]],
        excluded=frozenset(exclude),
    )


def ranking_to_json(model: Mhan, ranking: Ranking) -> dict:
    """The wire shape for a ranking: problem label plus scored studies."""
    items = []
    for idx, s in ranking.items:
        study = model.corpus.studies[idx]
        items.append({"id": study.id, "title": study.title, "score": s})
    return {"problem": model.corpus.problems[ranking.problem], "items": items}
