"""Pydantic request and response models for the recommender service.

Requests carry the same flat settings as the config file; field aliases use
the kebab-case flag spelling and unset fields fall back to the documented
defaults server-side.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


def _kebab(name: str) -> str:
    return name.replace("_", "-")


class RunOptions(BaseModel):
    model_config = ConfigDict(alias_generator=_kebab, populate_by_name=True, extra="forbid")

    dataset: str | None = None
    embeddings: str | None = None
    checkpoint: str | None = None
    out: str | None = None
    seed: int | None = None
    threshold: float | None = None
    fusion: str | None = None
    variant: str | None = None
    epochs: int | None = None
    neg_k: int | None = None
    k: int | None = None
    problem: str | None = None
    kind: str | None = None
    include_train: bool | None = None
    layers: int | None = None
    hidden_dim: int | None = None
    hgt_heads: int | None = None
    gat_heads: int | None = None
    fusional_heads: int | None = None
    lr: float | None = None
    split_ratio: float | None = None
    similarity_normalization: str | None = None
    gat_mean: str | None = None
    ndcg_agg: str | None = None
    noise_dist: str | None = None
    embed_dim: int | None = None
    resume: str | None = None

    def to_partial(self) -> dict:
        return self.model_dump(exclude_none=True)


class HealthResponse(BaseModel):
    status: str = "ok"


class BuildGraphsResponse(BaseModel):
    stats: dict
    files: dict[str, str]


class EmbedFallbackResponse(BaseModel):
    dim: int
    rows: int
    files: dict[str, str]


class TrainResponse(BaseModel):
    epochs_run: int
    final_loss: float | None
    train_positives: int
    test_positives: int
    files: dict[str, str]


class EvaluateResponse(BaseModel):
    report: dict
    files: dict[str, str]


class RankedItem(BaseModel):
    id: str
    title: str
    score: float


class RecommendResponse(BaseModel):
    problem: str
    items: list[RankedItem]
    files: dict[str, str]


class ExperimentResponse(BaseModel):
    grid: dict
    files: dict[str, str]


class ErrorDetail(BaseModel):
    detail: str = Field(description="what went wrong")
