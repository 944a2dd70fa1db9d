# app/pipeline/artifact_writer.py
"""
Atomic CSV and JSON emission.

Files are written to a temporary file in the target directory and renamed, so
readers never see a partial artifact. Output bytes depend only on the
resolved config and its seed.
"""

import json
import os
import tempfile
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel

from app.pipeline.experiment_state import ExperimentState

logger = structlog.get_logger(__name__)

FLOAT_FORMAT = "%.17g"


def _jsonable(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (Path, complex)):
        return str(value)
    raise TypeError(f"Unexpected artifact value of type {type(value).__name__}")


def dumps(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, default=_jsonable) + "\n"


def write_atomic(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path: Path, frame: pd.DataFrame, config: Dict[str, Any]) -> List[Path]:
    text = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    meta = Path(path).with_suffix(".meta.json")
    return [write_atomic(path, text), write_atomic(meta, dumps({"config": config, "columns": list(frame.columns)}))]


def write_json(path: Path, document: Dict[str, Any], config: Dict[str, Any]) -> Path:
    return write_atomic(path, dumps({**document, "config": config}))


class ArtifactWriter:
    """Emits every table and document of a finished experiment into config.out"""

    def emit_artifacts(self, state: ExperimentState) -> Dict[str, Any]:
        config = state["config"]
        result = state["result"]
        resolved = config.model_dump(mode="json")
        resolved["checks"] = [c.model_dump(mode="json") for c in state.get("checks", [])]
        out = Path(config.out)
        written: List[Path] = []
        try:
            for name, frame in sorted(result.tables.items()):
                written.extend(write_csv(out / f"{name}.csv", frame, resolved))
            for name, document in sorted(result.documents.items()):
                written.append(write_json(out / f"{name}.json", document, resolved))
        except OSError as e:
            logger.error(f"Failed to write artifacts: {str(e)}", out=str(out))
            return {"error": str(e), "exit_code": 1}
        logger.info("artifacts_written", out=str(out), files=len(written))
        return {"artifacts": [str(p) for p in written]}
