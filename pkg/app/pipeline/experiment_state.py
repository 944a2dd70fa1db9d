# app/pipeline/experiment_state.py

from dataclasses import dataclass, field
from typing import Any, Dict, List, TypedDict

import pandas as pd
from pydantic import BaseModel
from typing_extensions import NotRequired

from app.config.config import ExperimentConfig


class InvariantCheck(BaseModel):
    """One property an experiment asserts about its own output"""
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentResult:
    """Tables become CSV files, documents become JSON files"""
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    documents: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    checks: List[InvariantCheck] = field(default_factory=list)


class ExperimentState(TypedDict):
    """State for the experiment workflow"""
    config: ExperimentConfig
    params: NotRequired[BaseModel]
    result: NotRequired[ExperimentResult]
    checks: NotRequired[List[InvariantCheck]]
    artifacts: NotRequired[List[str]]
    exit_code: NotRequired[int]
    error: NotRequired[str]
