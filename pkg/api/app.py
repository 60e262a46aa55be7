"""FastAPI application exposing fits and simulations"""

from typing import Any, Dict, List, Optional

import pandas as pd
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

import config as env
from src.core.exceptions import ConvergenceError, UnidentifiableError, ZicpError
from src.core.inference import mcem_fit
from src.core.model import Dataset, Kind, Theta, simulate_hierarchy, uniform_design
from src.core.schemas import FitReport, McemConfig
from src.core.specfun import RngStream
from src.utils.config import Config
from src.utils.logger import setup_logger


# Pydantic models
class Row(BaseModel):
    stratum: str
    effort: float = 1.0
    y: float


class FitRequest(BaseModel):
    kind: Kind = Kind.CONTINUOUS
    rows: List[Row]
    config: Optional[Dict[str, Any]] = None


class SimulateRequest(BaseModel):
    theta: List[float] = Field(min_length=4, max_length=4)
    strata: int = Field(ge=1)
    per_stratum: int = Field(ge=1)
    effort: float = Field(default=1.0, gt=0.0)
    kind: Kind = Kind.CONTINUOUS
    seed: int = Field(default=20240101, ge=0)


class SimulateResponse(BaseModel):
    kind: Kind
    rows: List[Row]


# Initialize FastAPI app
app = FastAPI(
    title="zicp API",
    description="Random-effects compound Poisson fits for zero-inflated survey data",
    version="1.0.0"
)

config = Config()
logger = setup_logger(
    "src",
    config.get("logging.file", "logs/zicp_api.log"),
    config.get("logging.level", "INFO")
)


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy", "service": "zicp"}


@app.post("/fit", response_model=FitReport)
def fit(request: FitRequest):
    """Fit the posted rows by MCEM"""
    try:
        mcem = McemConfig.from_dict({**config.section("mcem"), **(request.config or {}), "kind": request.kind})
        frame = pd.DataFrame([r.model_dump() for r in request.rows])
        dataset = Dataset.from_frame(frame, request.kind)
        result = mcem_fit(dataset, mcem)
    except UnidentifiableError as e:
        raise HTTPException(status_code=422, detail=f"unidentifiable: {e}")
    except ConvergenceError as e:
        logger.error(f"fit did not converge: {e}")
        raise HTTPException(status_code=500, detail=str(e))
    except ZicpError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return result.to_report()


@app.post("/simulate", response_model=SimulateResponse)
def simulate(request: SimulateRequest):
    """Simulate a uniform design at θ"""
    try:
        theta = Theta.from_array(request.theta)
        design = uniform_design(request.strata, request.per_stratum, request.effort)
        dataset, _ = simulate_hierarchy(theta, design, request.kind, RngStream(request.seed))
    except ZicpError as e:
        raise HTTPException(status_code=400, detail=str(e))
    rows = [Row(**r) for r in dataset.to_frame().to_dict(orient="records")]
    return SimulateResponse(kind=request.kind, rows=rows)


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(
        app,
        host=config.get("api.host", env.ZICP_API_HOST),
        port=config.get("api.port", env.ZICP_API_PORT),
        reload=config.get("api.debug", False)
    )
