"""Run configuration shared by the CLI client and the service.

One flat structure unions the model, training, and path settings. Its file
form is flat JSON whose keys mirror the CLI flag names (kebab case); flags
override file values, and every run writes its fully-defaulted config next
to its outputs so the run can be reproduced from that file alone.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

from .model import ModelConfig
from .training import TrainingConfig

ENV_OUT_DIR = "MHAN_OUT_DIR"
DEFAULT_OUT_DIR = "mhan_out"


@dataclass
class RunConfig:
    dataset: str | None = None
    embeddings: str | None = None
    checkpoint: str | None = None
    out: str | None = None
    seed: int = 2022
    threshold: float = 0.8
    fusion: str = "fusional"
    variant: str = "MHAN"
    epochs: int = 200
    neg_k: int = 5
    k: int = 5
    problem: str | None = None
    kind: str | None = None
    include_train: bool = False
    layers: int = 2
    hidden_dim: int = 256
    hgt_heads: int = 4
    gat_heads: int = 4
    fusional_heads: int = 16
    lr: float = 0.001
    split_ratio: float = 0.8
    similarity_normalization: str = "printed"
    gat_mean: str = "heads"
    ndcg_agg: str = "per_query_mean"
    noise_dist: str = "uniform"
    embed_dim: int = 768
    resume: str | None = None

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_partial(cls, partial: dict) -> "RunConfig":
        known = set(cls.field_names())
        unknown = set(partial) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**partial)

    def to_flag_dict(self) -> dict:
        return {
            f.name.replace("_", "-"): getattr(self, f.name) for f in dataclasses.fields(self)
        }

    def model_config(self) -> ModelConfig:
        cfg = ModelConfig(
            layers=self.layers,
            hidden_dim=self.hidden_dim,
            hgt_heads=self.hgt_heads,
            gat_heads=self.gat_heads,
            fusional_heads=self.fusional_heads,
            fusion=self.fusion,
            variant=self.variant,
            threshold=self.threshold,
            seed=self.seed,
            similarity_normalization=self.similarity_normalization,
            gat_mean=self.gat_mean,
            rand_embed_dim=self.embed_dim,
        )
        cfg.validate()
        return cfg

    def training_config(self) -> TrainingConfig:
        cfg = TrainingConfig(
            seed=self.seed,
            split_ratio=self.split_ratio,
            lr=self.lr,
            epochs=self.epochs,
            neg_k=self.neg_k,
            noise_dist=self.noise_dist,
        )
        cfg.validate()
        return cfg

    def out_dir(self) -> str:
        return self.out or os.environ.get(ENV_OUT_DIR) or DEFAULT_OUT_DIR


def load_config_file(path) -> dict:
    """Read a flat kebab-keyed config file into python-named keys."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config file must hold a JSON object")
    return {key.replace("-", "_"): value for key, value in raw.items()}


def write_config_file(path, config: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_flag_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
