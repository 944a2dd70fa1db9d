# app/lab/schemas.py

from enum import Enum
from typing import Sequence

import numpy as np
from pydantic import BaseModel, Field


class SumMode(str, Enum):
    """How a prime-block sum is evaluated"""
    EXACT = "exact"
    PNT = "pnt"
    AUTO = "auto"

    @classmethod
    def get_default(cls) -> "SumMode":
        return cls.AUTO


class Convention(str, Enum):
    """Where the prime sums start and how the grid is laid out"""
    THM1 = "thm1"
    THM3 = "thm3"
    FULL = "full"

    @classmethod
    def get_default(cls) -> "Convention":
        return cls.THM1


class EstimateCI(BaseModel):
    """A Monte-Carlo estimate with its standard error and seed provenance"""
    value: float
    se: float = Field(ge=0.0)
    n: int = Field(gt=0)
    seed: int = Field(ge=0)
    stream: str = ""

    @classmethod
    def from_proportion(cls, successes: int, n: int, seed: int, stream: str = "") -> "EstimateCI":
        p = successes / n
        return cls(value=p, se=float(np.sqrt(max(p * (1.0 - p), 0.0) / n)), n=n, seed=seed, stream=stream)

    @classmethod
    def from_samples(cls, samples: Sequence[float], seed: int, stream: str = "") -> "EstimateCI":
        x = np.asarray(samples, dtype=float)
        se = float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
        return cls(value=float(np.mean(x)), se=se, n=int(x.size), seed=seed, stream=stream)

    @classmethod
    def from_moments(cls, total: float, total_sq: float, n: int, seed: int, stream: str = "") -> "EstimateCI":
        """Mean-type estimate from running sums (so chunked runs reduce exactly)"""
        mean = total / n
        var = max(total_sq / n - mean * mean, 0.0) * n / (n - 1) if n > 1 else 0.0
        return cls(value=mean, se=float(np.sqrt(var / n)), n=n, seed=seed, stream=stream)
