"""
API Routes for the crash-risk pipeline service
"""
from typing import Optional

from fastapi import APIRouter, File, Form, HTTPException, UploadFile

from app import __version__
from app.core.config import LabelConfig, build_section, load_config
from app.core.errors import ConfigError, CrashcastError
from app.services.pipeline_service import PipelineService
from app.utils.storage import new_job_dir, save_upload_file

router = APIRouter(prefix="/api/v1")

# Set on startup by app.main
pipeline_service: Optional[PipelineService] = None


def set_pipeline_service(service: PipelineService):
    """Set the pipeline service instance"""
    global pipeline_service
    pipeline_service = service


def _service() -> PipelineService:
    if pipeline_service is None:
        raise HTTPException(status_code=503, detail="Service not initialized")
    return pipeline_service


def _unwrap(result: dict) -> dict:
    """Pipeline errors are client errors; the exit code tells input from numeric failures"""
    if not result["success"]:
        raise HTTPException(status_code=422, detail={"error": result["error"], "exit_code": result.get("exit_code")})
    return result


async def _store(upload: UploadFile, role: str, job: str):
    try:
        return await save_upload_file(upload, role, job)
    except CrashcastError as e:
        raise HTTPException(status_code=422, detail={"error": str(e), "exit_code": e.exit_code})


@router.get("/health")
async def health():
    """Health check endpoint"""
    return {"status": "ok", "service": "crashcast", "version": __version__}


@router.get("/config")
async def get_config():
    """
    Effective configuration (defaults merged with CRASHCAST_CONFIG)

    Returns:
        {"success": true, "config": {...}}
    """
    try:
        return {"success": True, "config": load_config()}
    except ConfigError as e:
        raise HTTPException(status_code=500, detail=f"Failed to read configuration: {e}")


@router.post("/prepare")
async def prepare(
    sensors: UploadFile = File(...),
    weather: UploadFile = File(...),
    crashes: UploadFile = File(...),
    seed: int = Form(...),
    ratio: Optional[int] = Form(None),
    policy: Optional[str] = Form(None),
    train_fraction: Optional[float] = Form(None),
):
    """
    Ingest, label and split uploaded CSVs

    Args:
        - sensors, weather, crashes: the three input CSVs
        - seed: run seed (mandatory)
        - ratio, policy, train_fraction: optional label overrides

    Returns:
        {
            "success": true,
            "job": "prepare-<id>",
            "data": {class counts, achieved ratio, skipped events, files}
        }
    """
    service = _service()
    if seed < 0:
        raise HTTPException(status_code=400, detail="seed must be >= 0")
    try:
        label = build_section(
            LabelConfig, load_config(), "label", ratio=ratio, policy=policy, train_fraction=train_fraction
        )
    except ConfigError as e:
        raise HTTPException(status_code=400, detail=str(e))

    job_dir = new_job_dir("prepare")
    paths = [
        await _store(f, role, job_dir.name)
        for f, role in ((sensors, "sensors"), (weather, "weather"), (crashes, "crashes"))
    ]

    result = _unwrap(await service.prepare(*paths, job_dir, seed, label))
    return {**result, "job": job_dir.name}


@router.post("/evaluate")
async def evaluate(
    model: UploadFile = File(...),
    dataset: UploadFile = File(...),
):
    """
    One-vs-rest report of an uploaded model file on an uploaded prepared dataset

    Returns:
        {"success": true, "job": "evaluate-<id>", "data": {"summary": {...}, "report": {...}, "files": {...}}}
    """
    service = _service()
    job_dir = new_job_dir("evaluate")
    model_path = await _store(model, "model", job_dir.name)
    data_path = await _store(dataset, "dataset", job_dir.name)

    result = _unwrap(await service.evaluate(model_path, data_path, job_dir))
    return {**result, "job": job_dir.name}
