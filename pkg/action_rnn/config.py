"""Run configuration: flat key=value files, .env process settings, validated models."""

import logging
import os
from pathlib import Path
from typing import Dict, Optional, Type, TypeVar, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)

ENV_LOG_LEVEL = "ACTION_RNN_LOG_LEVEL"
ENV_THREADS = "ACTION_RNN_THREADS"

M = TypeVar("M", bound=BaseModel)


def validated(model_cls: Type[M], **values) -> M:
    """Build a pydantic model, turning validation failures into ConfigError."""
    try:
        return model_cls(**values)
    except ValidationError as e:
        err = e.errors()[0]
        field = ".".join(str(p) for p in err["loc"]) or None
        raise ConfigError(err["msg"], field=field) from e


def process_defaults() -> Dict[str, object]:
    load_dotenv()
    out: Dict[str, object] = {}
    level = os.getenv(ENV_LOG_LEVEL)
    if level:
        out["log_level"] = level
    threads = os.getenv(ENV_THREADS)
    if threads:
        out["threads"] = threads
    return out


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    values: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"line {lineno}: expected key=value", field=str(path))
            values[key.strip()] = value.strip()
    return values


class RunConfig(BaseModel):
    """Every knob a command can take. Unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    threads: Optional[int] = None
    log_level: str = "INFO"
    record_time: bool = False

    # generator
    catalog_size: int = 1000
    sessions: int = 20000
    session_len_min: int = 2
    session_len_max: int = 20
    zipf_s: float = 1.1
    n_clusters: int = 20
    p_intra: float = 0.8
    rec_rate: float = 0.1
    slate_size: int = 5
    p_follow: float = 0.8

    # preprocessing
    min_count: int = 10
    max_len: int = 40
    max_recs: int = 5
    valid_fraction: float = 0.2

    # training
    variant: str = "late"
    embed_dim: int = 40
    hidden_dim: int = 40
    batch_size: int = 64
    iterations: int = 10000
    lr_start: float = 0.01
    lr_end: float = 0.001
    mask_mode: Optional[str] = None
    eval_every: int = 0
    log_every: int = 100

    # evaluation
    top_k: int = 10
    n_boot: int = 30
    ci_level: float = 0.95

    @field_validator("threads")
    @classmethod
    def _threads_positive(cls, v):
        if v is not None and v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, v: str):
        v = v.upper()
        if v not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {v!r}")
        return v

    def resolved_threads(self) -> int:
        return self.threads or os.cpu_count() or 1

    def echo(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in self.model_dump().items())
