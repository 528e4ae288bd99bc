from fastapi import FastAPI, UploadFile, File
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field
import sys
from pathlib import Path
from typing import Dict, Optional

# Add parent directory to system path to import utils
sys.path.append(str(Path(__file__).parent.parent))

from utils.config import Command, GcaConfig, NuisanceConfig, RunSpec, Setting, SimConfig
from utils.dgp import draw_population
from utils.errors import ExposureLabError
from utils.graph import parse_edge_list
from utils.harness import json_safe, run_replication

app = FastAPI(title="Exposure mapping lab")

# Enable CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class ValidityRequest(BaseModel):
    setting: Setting = Setting.S1
    n: int = Field(default=500, ge=10)
    seed: int = 2024
    L: int = Field(default=4, ge=2)
    folds: Optional[int] = Field(default=None, ge=2)
    hidden_width: int = Field(default=16, ge=1)
    lr: float = Field(default=0.01, gt=0)
    epochs: int = Field(default=200, ge=1)


class DirectEffectRequest(BaseModel):
    n: int = Field(default=1000, ge=10)
    seed: int = 2024
    method: str = "ipw"
    epochs: int = Field(default=200, ge=1)


@app.get("/api/health")
async def health():
    return {"status": "ok"}


@app.post("/api/simulate")
async def simulate(config: SimConfig):
    try:
        dataset = draw_population(config)
        return {
            "success": True,
            "n": dataset.n,
            "setting": config.setting.value,
            "edges": dataset.graph.edge_count,
            "mean_degree": dataset.graph.mean_degree,
            "mean_Y": float(dataset.Y.mean()),
            "treated_share": float(dataset.D.mean()),
            "mean_Z_true": float(dataset.Z_true.mean()),
        }
    except ExposureLabError as e:
        return {"error": str(e)}


@app.post("/api/test-validity")
async def test_validity(request: ValidityRequest):
    try:
        spec = RunSpec(
            command=Command.TEST_VALIDITY,
            settings=[request.setting],
            n_list=[request.n],
            base_seed=request.seed,
            L=request.L,
            workers=1,
            gca=GcaConfig.with_hidden_width(request.hidden_width, learning_rate=request.lr,
                                            epochs=request.epochs),
            nuisance=NuisanceConfig(folds=request.folds),
        )
        record = run_replication(spec, request.setting, request.n, 0)
        return {"success": True, "record": json_safe(record)}
    except (ExposureLabError, ValueError) as e:
        return {"error": str(e)}


@app.post("/api/estimate-direct")
async def estimate_direct(request: DirectEffectRequest):
    try:
        spec = RunSpec(
            command=Command.ESTIMATE_DIRECT,
            settings=[Setting.DIRECT],
            n_list=[request.n],
            base_seed=request.seed,
            method=request.method,
            workers=1,
            gca=GcaConfig(epochs=request.epochs),
        )
        record = run_replication(spec, Setting.DIRECT, request.n, 0)
        return {"success": True, "record": json_safe(record)}
    except (ExposureLabError, ValueError) as e:
        return {"error": str(e)}


@app.post("/api/graph/upload")
async def upload_graph(file: UploadFile = File(...)):
    try:
        text = (await file.read()).decode("utf-8")
    except UnicodeDecodeError:
        return {"error": "Edge-list file must be UTF-8 text"}
    try:
        graph = parse_edge_list(text)
    except ExposureLabError as e:
        return {"error": str(e)}
    degrees = graph.degrees
    return {
        "success": True,
        "n": graph.n,
        "edges": graph.edge_count,
        "mean_degree": graph.mean_degree,
        "min_degree": int(degrees.min()) if graph.n else 0,
        "max_degree": int(degrees.max()) if graph.n else 0,
        "isolated": int((degrees == 0).sum()),
    }
