"""
CSV helpers: encoding detection, canonical number formatting, frame writing
"""
import io
import json
import math
from pathlib import Path
from typing import IO, Iterable, Union

import chardet
import numpy as np
import pandas as pd

from app.core.errors import EmptyFile

Source = Union[bytes, str, Path, IO[bytes]]

TRY_ENCODINGS = ("utf-8-sig", "utf-8", "latin1")


def read_bytes(source: Source) -> bytes:
    """Accept raw bytes, a path, or a binary stream"""
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    return source.read()


def detect_encoding(raw: bytes) -> str:
    """Detect text encoding using chardet, falling back through TRY_ENCODINGS"""
    if raw.startswith(b"\xef\xbb\xbf"):
        return "utf-8-sig"
    result = chardet.detect(raw[:10000])
    encoding = result.get("encoding") or "utf-8"
    confidence = result.get("confidence") or 0
    if encoding.lower() == "ascii":
        return "utf-8"
    if confidence < 0.7:
        for enc in TRY_ENCODINGS:
            try:
                raw.decode(enc)
                return enc
            except UnicodeDecodeError:
                continue
    return encoding


def decode_text(source: Source, name: str = "input") -> str:
    raw = read_bytes(source)
    if not raw.strip():
        raise EmptyFile(name)
    encoding = detect_encoding(raw)
    try:
        return raw.decode(encoding)
    except (UnicodeDecodeError, LookupError):
        return raw.decode("latin1")


def format_number(value) -> str:
    """Shortest round-trip decimal for floats, plain digits for integers"""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return ""
    return repr(value)


def frame_to_csv(frame: pd.DataFrame) -> str:
    """Write a frame with canonical number formatting and '\\n' line endings"""
    out = frame.copy()
    for col in out.columns:
        if pd.api.types.is_float_dtype(out[col]) or pd.api.types.is_integer_dtype(out[col]):
            out[col] = [format_number(v) for v in out[col].to_numpy()]
    buf = io.StringIO()
    out.to_csv(buf, index=False, lineterminator="\n")
    return buf.getvalue()


def write_text(path: Union[str, Path], text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    return path


def write_csv(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    return write_text(path, frame_to_csv(frame))


def join_floats(values: Iterable[float]) -> str:
    return " ".join(format_number(float(v)) for v in values)


def write_json(path: Union[str, Path], payload) -> Path:
    return write_text(path, json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n")
