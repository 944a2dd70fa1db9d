# app/config/config.py

from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

# Cargar las variables del archivo .env
load_dotenv()


class Settings(BaseSettings):
    """Process-wide knobs; every field can be overridden by a ZXLB_* variable"""

    model_config = SettingsConfigDict(env_prefix="ZXLB_", env_file=".env", extra="ignore")

    # Sieve
    cache_dir: Path = Path.home() / ".cache" / "zxlab"
    sieve_limit: int = Field(default=2_000_000, ge=2)
    sieve_segment_size: int = Field(default=1 << 22, ge=1 << 10)

    # Zeta
    zeta_terms_per_height: float = Field(default=2.0, gt=0.0)
    zeta_max_terms: int = Field(default=400_000_000, ge=20)
    zeta_order: int = Field(default=12, ge=1, le=30)

    # Prime Number Theorem integrals
    pnt_abs_tol: float = Field(default=1e-9, gt=0.0)
    pnt_max_panels: int = Field(default=4000, ge=1)
    pnt_tolerance_base: float = Field(default=0.1, gt=0.0)
    pnt_tolerance_rate: float = Field(default=0.5, ge=0.0)

    # Monte-Carlo
    steinhaus_exact_primes: int = Field(default=4096, ge=1)
    steinhaus_max_gaussian_share: float = Field(default=0.05, ge=0.0, le=1.0)
    replica_chunk: int = Field(default=1000, ge=1)
    max_grid_points: int = Field(default=10_000_000, ge=1)

    # Logging
    log_level: str = "INFO"
    log_json: bool = False


@lru_cache()
def get_settings() -> Settings:
    return Settings()


def read_key_value_file(path: Path) -> Dict[str, Any]:
    """
    Read a flat key=value experiment file

    Args:
        path: File with one `key=value` pair per line; `#` starts a comment

    Returns:
        Mapping of keys to raw string values (empty values dropped)
    """
    if not Path(path).is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    values = dotenv_values(path)
    return {k: v for k, v in values.items() if v is not None and v != ""}


def sieve_cache_path(settings: Optional[Settings] = None, limit: Optional[int] = None) -> Path:
    settings = settings or get_settings()
    limit = limit if limit is not None else settings.sieve_limit
    return Path(settings.cache_dir) / f"primes-{limit}.zxlb"


class Subcommand(str, Enum):
    SIEVE_CACHE = "sieve-cache"
    WALK = "walk"
    EULER_CHECK = "euler-check"
    ZETA_MAX = "zeta-max"
    MODEL_SAMPLE = "model-sample"
    MODEL_VERIFY = "model-verify"
    BARRIER_DUMP = "barrier-dump"
    MOMENTS = "moments"
    TAIL = "tail"
    BALLOT = "ballot"
    MOLLIFIER_CERTIFY = "mollifier-certify"


class ExperimentConfig(BaseModel):
    """
    One resolved run: the subcommand, its parameters and the global knobs

    `params` is validated later by the subcommand's own parameter model.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    subcommand: Subcommand
    params: Dict[str, Any] = Field(default_factory=dict)
    seed: int = Field(default=0, ge=0, lt=2**64)
    replicas: int = 1000
    threads: int = Field(default=1, ge=1)
    out: Path = Path("out")
    sieve_cache: Optional[str] = None
    grid_max: Optional[int] = Field(default=None, ge=1)

    @field_validator("replicas")
    @classmethod
    def _replicas_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("replicas must be ≥ 1")
        return value

    @classmethod
    def resolve(cls, subcommand: str, file_values: Dict[str, Any], overrides: Dict[str, Any]) -> "ExperimentConfig":
        """
        Merge a key=value file with command-line overrides

        Global keys become fields; every other key is a subcommand parameter.
        """
        merged = {**file_values, **{k: v for k, v in overrides.items() if v is not None}}
        fields = {k: merged.pop(k) for k in list(merged) if k in _GLOBAL_KEYS}
        return cls(subcommand=subcommand, params=merged, **fields)


_GLOBAL_KEYS = ("seed", "replicas", "threads", "out", "sieve_cache", "grid_max")
