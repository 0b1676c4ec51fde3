"""Clinical evidence recommendation over dual evidence graphs.

The library builds a heterogeneous co-reference graph and a text-similarity
graph from a study corpus, embeds them with two attention channels fused
per node, trains with a negative-sampled margin loss, and evaluates top-k
recommendations. A FastAPI service (``mhan.service``) and a thin CLI client
(``mhan.cli``) wrap the same workflows.
"""

from .config import RunConfig
from .corpus import Corpus, EmbeddingTable, Study, hash_embed, load_corpus, load_embeddings
from .evaluation import MetricReport, evaluate, hit_rate_at_k, ndcg_at_k, run_experiment
from .graphs import build_ecg, build_etg, build_ueg, similarity_matrix
from .model import Mhan, ModelConfig, Ranking, forward, make_variant, recommend_topk, score
from .training import EdgeSplit, TrainingConfig, margin_loss, sample_negatives, split_edges, train

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "EdgeSplit",
    "EmbeddingTable",
    "MetricReport",
    "Mhan",
    "ModelConfig",
    "Ranking",
    "RunConfig",
    "Study",
    "TrainingConfig",
    "build_ecg",
    "build_etg",
    "build_ueg",
    "evaluate",
    "forward",
    "hash_embed",
    "hit_rate_at_k",
    "load_corpus",
    "load_embeddings",
    "make_variant",
    "margin_loss",
    "ndcg_at_k",
    "recommend_topk",
    "run_experiment",
    "sample_negatives",
    "score",
    "similarity_matrix",
    "split_edges",
    "train",
]
