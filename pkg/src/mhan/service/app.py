"""HTTP surface over the recommender workflows.

Endpoints are stateless: each request names its input files and output
directory, the handler runs the corresponding workflow synchronously, and
the response summarizes results plus the paths written. Domain errors map
to 400, missing files to 404.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import workflows
from ..autodiff import NonFiniteGradient
from ..config import RunConfig
from ..corpus import CorpusError, EmbeddingError
from ..graphs import GraphError
from ..training import TrainingError
from . import schemas


def _run(workflow, options: schemas.RunOptions) -> dict:
    try:
        cfg = RunConfig.from_partial(options.to_partial())
        return workflow(cfg)
    except FileNotFoundError as exc:
        raise HTTPException(status_code=404, detail=str(exc)) from exc
    except (
        CorpusError,
        EmbeddingError,
        GraphError,
        TrainingError,
        NonFiniteGradient,
        workflows.WorkflowError,
        ValueError,
    ) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


def create_app() -> FastAPI:
    app = FastAPI(
        title="mhan",
        description="Clinical evidence recommender over dual evidence graphs",
        version="0.1.0",
    )
    errors = {400: {"model": schemas.ErrorDetail}, 404: {"model": schemas.ErrorDetail}}

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse()

    @app.post("/graphs/build", response_model=schemas.BuildGraphsResponse, responses=errors)
    def build_graphs(options: schemas.RunOptions) -> schemas.BuildGraphsResponse:
        return schemas.BuildGraphsResponse(**_run(workflows.build_graphs_workflow, options))

    @app.post("/embeddings/fallback", response_model=schemas.EmbedFallbackResponse, responses=errors)
    def embed_fallback(options: schemas.RunOptions) -> schemas.EmbedFallbackResponse:
        return schemas.EmbedFallbackResponse(**_run(workflows.embed_fallback_workflow, options))

    @app.post("/train", response_model=schemas.TrainResponse, responses=errors)
    def train(options: schemas.RunOptions) -> schemas.TrainResponse:
        return schemas.TrainResponse(**_run(workflows.train_workflow, options))

    @app.post("/evaluate", response_model=schemas.EvaluateResponse, responses=errors)
    def evaluate(options: schemas.RunOptions) -> schemas.EvaluateResponse:
        return schemas.EvaluateResponse(**_run(workflows.evaluate_workflow, options))

    @app.post("/recommend", response_model=schemas.RecommendResponse, responses=errors)
    def recommend(options: schemas.RunOptions) -> schemas.RecommendResponse:
        result = _run(workflows.recommend_workflow, options)
        return schemas.RecommendResponse(
            problem=result["ranking"]["problem"],
            items=[schemas.RankedItem(**item) for item in result["ranking"]["items"]],
            files=result["files"],
        )

    @app.post("/experiment", response_model=schemas.ExperimentResponse, responses=errors)
    def experiment(options: schemas.RunOptions) -> schemas.ExperimentResponse:
        return schemas.ExperimentResponse(**_run(workflows.experiment_workflow, options))

    return app


app = create_app()
