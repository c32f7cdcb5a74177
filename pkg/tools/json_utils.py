# tools/json_utils.py
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, is_dataclass
from typing import Any, Dict, Optional

import numpy as np
from pydantic import BaseModel

from core.errors import FormatError


def to_jsonable(obj: Any) -> Any:
    """
    Converts results into plain JSON types:
    - numpy scalars/arrays -> float/int/list
    - pydantic models -> model_dump(mode="json")
    - dataclasses -> dict
    - non-finite floats -> None (files are written with allow_nan=False)
    """
    if isinstance(obj, BaseModel):
        return to_jsonable(obj.model_dump(mode="json"))
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(asdict(obj))
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    return obj


def dumps(obj: Any, *, indent: Optional[int] = 2) -> str:
    # float repr is the shortest round-trip form, so weights survive bit-exactly
    return json.dumps(to_jsonable(obj), indent=indent, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path: str, obj: Any) -> str:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(obj))
    return path


def read_json_object(path: str) -> Dict[str, Any]:
    """
    Strict counterpart of write_json: the file must hold one JSON object.
    Missing file, truncated text or a non-object document -> FormatError.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise FormatError(f"Cannot read JSON file {path}: {e}") from e

    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"Malformed JSON in {path}: {e}") from e

    if not isinstance(obj, dict):
        raise FormatError(f"Expected a JSON object in {path}, got {type(obj).__name__}.")
    return obj
