"""Pipeline configuration: YAML file, overridden by CLI flags.

Unknown keys are rejected outright; silent typos in configs are a classic
way to run a study with the wrong threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from importlib import resources
from typing import Dict, List, Optional

import yaml

from .cohort import CT_EXCLUDE_KEYWORDS, DERIVED_KEYWORDS, MRI_EXCLUDE_KEYWORDS
from .errors import ConfigError


@dataclass
class PipelineConfig:
    uncertainty_metric: str = "margin"       # "margin" or "entropy"
    uncertainty_threshold: float = 0.2
    smoothing_window: int = 3
    min_run: int = 3
    step_mm: float = 10.0
    bootstrap_resamples: int = 1000
    ci_level: float = 0.95
    seed: int = 0
    strict_geometry: bool = False
    mri_exclude_keywords: List[str] = field(
        default_factory=lambda: list(MRI_EXCLUDE_KEYWORDS))
    ct_exclude_keywords: List[str] = field(
        default_factory=lambda: list(CT_EXCLUDE_KEYWORDS))
    derived_keywords: List[str] = field(
        default_factory=lambda: list(DERIVED_KEYWORDS))
    synonym_map_path: Optional[str] = None

    def validate(self) -> None:
        if self.uncertainty_metric not in ("margin", "entropy"):
            raise ConfigError(f"uncertainty_metric {self.uncertainty_metric!r}")
        if not (0.0 <= self.uncertainty_threshold <= 1.0):
            raise ConfigError("uncertainty_threshold must be in [0, 1]")
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise ConfigError("smoothing_window must be a positive odd integer")
        if self.min_run < 1:
            raise ConfigError("min_run must be >= 1")
        if self.step_mm <= 0:
            raise ConfigError("step_mm must be positive")
        if self.bootstrap_resamples < 1:
            raise ConfigError("bootstrap_resamples must be >= 1")
        if not (0.0 < self.ci_level < 1.0):
            raise ConfigError("ci_level must be in (0, 1)")


def load_config(path: Optional[str] = None, **overrides) -> PipelineConfig:
    """Build the effective config: flag overrides > file values > defaults."""
    data: Dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must be a mapping")
        data.update(loaded)
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = PipelineConfig(**data)
    cfg.validate()
    return cfg


def load_synonym_map(path: Optional[str] = None) -> Dict[str, List[str]]:
    """Tag-string to region-name map for DICOM tag agreement."""
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    text = resources.files("bodyregion").joinpath(
        "data/body_part_synonyms.json").read_text(encoding="utf-8")
    return json.loads(text)
