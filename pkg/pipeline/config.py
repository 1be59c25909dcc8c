"""
config.py — Pipeline configuration.

A single JSON file (``--config`` or FOLIOGRAPH_CONFIG) merged over built-in
defaults. CLI flags override whatever the file says.
"""

import json
import os
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from pipeline.errors import ConfigError

PROJECT_ROOT = Path(__file__).parent.parent

try:
    from dotenv import load_dotenv
    load_dotenv(PROJECT_ROOT / ".env")
except ImportError:
    # no python-dotenv: FOLIOGRAPH_* must come from the real environment
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Thresholds(_Section):
    min_confidence: float = Field(0.25, ge=0.0, le=1.0)
    iou: float = Field(0.5, ge=0.0, le=1.0)
    stained: float = Field(0.02, ge=0.0, le=1.0)
    heavily_stained: float = Field(0.10, ge=0.0, le=1.0)
    link: float = Field(0.92, ge=0.0, le=1.0)
    review: float = Field(0.85, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.review > self.link:
            raise ValueError("review threshold must not exceed link threshold")
        if self.stained > self.heavily_stained:
            raise ValueError("stained threshold must not exceed heavily_stained")
        return self


class HarvestSettings(_Section):
    metadata_prefix: str = "oai_dc"
    max_retries: int = Field(5, ge=0)
    backoff_base: float = Field(1.0, ge=0.0)
    backoff_factor: float = Field(2.0, ge=1.0)
    retry_after_cap: float = Field(60.0, ge=0.0)
    timeout: float = Field(60.0, gt=0.0)
    max_redirects: int = Field(5, ge=0)
    user_agent: str = "FolioGraph/1.0 (OAI-PMH harvester)"


class ReconciliationEndpoint(_Section):
    url: str = (
        "https://www.wikidata.org/w/api.php?action=wbsearchentities"
        "&format=json&language=en&type=item&search={query}"
    )
    results_path: str = "search"
    iri_field: str = "concepturi"
    label_field: str = "label"
    max_candidates: int = Field(10, ge=1)


class Endpoints(_Section):
    oai: str | None = None
    reconciliation: ReconciliationEndpoint = Field(default_factory=ReconciliationEndpoint)
    reconciliation_fixture: str | None = None


class RateLimits(_Section):
    reconciliation_per_second: float = Field(2.0, gt=0.0)


class PipelineConfig(_Section):
    thresholds: Thresholds = Field(default_factory=Thresholds)
    harvest: HarvestSettings = Field(default_factory=HarvestSettings)
    endpoints: Endpoints = Field(default_factory=Endpoints)
    rate_limits: RateLimits = Field(default_factory=RateLimits)
    workers: int = Field(1, ge=1)


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """
    Load the pipeline configuration.

    Args:
        path: JSON config file. Falls back to $FOLIOGRAPH_CONFIG, then to defaults.

    Raises:
        ConfigError: unreadable file, bad JSON, or values failing validation.
    """
    path = path or os.environ.get("FOLIOGRAPH_CONFIG")
    if not path:
        return PipelineConfig()

    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")

    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigError(f"config {path}: {where}: {first['msg']}")


def with_overrides(config: PipelineConfig, **thresholds) -> PipelineConfig:
    """Return a copy with CLI-provided threshold values applied (None = keep)."""
    updates = {k: v for k, v in thresholds.items() if v is not None}
    if not updates:
        return config
    merged = config.thresholds.model_dump() | updates
    try:
        new_thresholds = Thresholds.model_validate(merged)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(f"invalid threshold override: {first['msg']}")
    return config.model_copy(update={"thresholds": new_thresholds})


def default_store_root() -> Path:
    return Path(os.environ.get("FOLIOGRAPH_STORE", "store"))
