"""FastAPI wrapper around the simulator.

Every endpoint is a synchronous batch call: the simulator has no live state,
so the service is a thin request/response shell over the library.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import GeoschedError
from . import handlers
from .schemas import (
    AllocateRequest,
    AllocationResponse,
    ErrorResponse,
    ExperimentRequest,
    ExperimentResponse,
    OracleRequest,
    ScenarioSummary,
    TrainRequest,
    TrainResponse,
    ValidateRequest,
)

# HTTP status per CLI exit code
STATUS = {2: 422, 3: 409}


def create_app() -> FastAPI:
    app = FastAPI(title="geosched", version=__version__)

    @app.exception_handler(GeoschedError)
    @app.exception_handler(FileNotFoundError)
    async def _domain_error(request: Request, exc: Exception):
        code = handlers.exit_code(exc)
        body = ErrorResponse(error=type(exc).__name__, detail=str(exc), exit_code=code)
        return JSONResponse(status_code=STATUS[code], content=body.model_dump())

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/validate", response_model=ScenarioSummary)
    def validate(req: ValidateRequest):
        return handlers.validate(req)

    @app.post("/oracle", response_model=AllocationResponse)
    def oracle(req: OracleRequest):
        return handlers.oracle(req)

    @app.post("/allocate", response_model=AllocationResponse)
    def allocate(req: AllocateRequest):
        return handlers.allocate(req)

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest):
        return handlers.train_agents(req)

    @app.post("/experiments", response_model=ExperimentResponse)
    def experiments(req: ExperimentRequest):
        return handlers.experiment(req)

    return app


app = create_app()
