"""
Storage layout of the HTTP service: uploads/<job>/ for inputs, outputs/<job>/ for results
"""
import os
import re
import uuid
from pathlib import Path
from typing import Optional

import aiofiles
from fastapi import UploadFile

from app.core.errors import EmptyFile

STORAGE_BASE = Path(os.getenv("CRASHCAST_STORAGE", Path(__file__).parent.parent.parent / "storage"))

# suffix each reader expects, by upload role
UPLOAD_SUFFIXES = {
    "sensors": ".csv",
    "weather": ".csv",
    "crashes": ".csv",
    "dataset": ".csv",
    "model": ".model",
}


def upload_name(filename: Optional[str], role: str) -> str:
    """
    Storage name for one uploaded study input

    The client's stem is kept, since it names the model in evaluation reports;
    characters outside [A-Za-z0-9_.-] fold to '_' and the suffix is always the
    role's, so `readings (1).CSV` sent as sensors is stored as `readings_1.csv`.
    """
    suffix = UPLOAD_SUFFIXES[role]
    stem = (filename or "").replace("\\", "/").rsplit("/", 1)[-1]
    if stem.lower().endswith(suffix):
        stem = stem[: -len(suffix)]
    stem = re.sub(r"[^\w\-.]", "_", stem, flags=re.ASCII)
    stem = re.sub(r"_+", "_", stem).strip("_.")
    return (stem or role) + suffix


def get_storage_path(subdirectory: str = "") -> Path:
    if subdirectory:
        return STORAGE_BASE / subdirectory.lstrip("/")
    return STORAGE_BASE


def new_job_dir(kind: str) -> Path:
    """Fresh output directory for one request, e.g. outputs/prepare-<hex>"""
    path = get_storage_path(f"outputs/{kind}-{uuid.uuid4().hex[:12]}")
    path.mkdir(parents=True, exist_ok=False)
    return path


async def save_upload_file(upload_file: UploadFile, role: str, job: str) -> Path:
    """
    Write one uploaded sensor, weather, crash, dataset or model file under uploads/<job>/

    Raises EmptyFile for a zero-byte upload. Two inputs of one job that would
    share a name are kept apart by prefixing the later one with its role.
    """
    content = await upload_file.read()
    if not content:
        raise EmptyFile(f"uploaded {role} file")
    target_dir = get_storage_path(f"uploads/{job}")
    target_dir.mkdir(parents=True, exist_ok=True)
    file_path = target_dir / upload_name(upload_file.filename, role)
    if file_path.exists():
        file_path = target_dir / f"{role}-{file_path.name}"
    async with aiofiles.open(file_path, "wb") as f:
        await f.write(content)
    return file_path


def ensure_storage_dirs():
    for d in ("uploads", "outputs"):
        get_storage_path(d).mkdir(parents=True, exist_ok=True)
