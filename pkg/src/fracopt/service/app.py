"""FastAPI app exposing the experiment runner.

POST /run validates the submitted config and executes it in-process.
Invalid configs are HTTP 400 (clients map that to exit code 3); solver
non-convergence and failed assertions are successful HTTP exchanges whose
payload carries exit_code 2 or 4.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import ConfigError, RunConfig, parse_config
from ..experiments import run_experiment
from .models import FileArtifact, HealthResponse, RunRequest, RunResponse


def create_app() -> FastAPI:
    app = FastAPI(title="fracopt", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/run", response_model=RunResponse)
    def run(request: RunRequest) -> RunResponse:
        try:
            config = parse_config(request.config_text, request.format)
            if request.experiment is not None:
                merged = config.model_dump()
                merged["experiment"] = request.experiment
                config = RunConfig.model_validate(merged)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        try:
            result = run_experiment(config, seed=request.seed,
                                    assert_checks=request.assert_checks)
        except ConfigError as exc:
            # cross-field problems only detectable at build time
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return RunResponse(
            exit_code=result.exit_code,
            experiment=config.experiment,
            report=result.report,
            files=[FileArtifact(name=n, content=c) for n, c in result.files],
        )

    return app
