"""
FastAPI Application - crash-risk pipeline service
"""
import os

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app import __version__
from app.api.routes import router, set_pipeline_service
from app.services.pipeline_service import PipelineService
from app.utils.logger import configure_logging, get_logger
from app.utils.storage import ensure_storage_dirs

configure_logging()
logger = get_logger(__name__)

ensure_storage_dirs()
set_pipeline_service(PipelineService())
logger.info("Crash-risk pipeline service initialized")

app = FastAPI(
    title="Crashcast API",
    description="Batch preparation and evaluation jobs for traffic crash-risk forecasting",
    version=__version__,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(router)


@app.get("/")
async def root():
    return {
        "service": "Crashcast API",
        "version": __version__,
        "docs": "/docs",
        "health": "/api/v1/health",
    }


if __name__ == "__main__":
    import uvicorn
    port = int(os.getenv("PORT", 8000))
    uvicorn.run(app, host="0.0.0.0", port=port)
