"""
services/config.py

Tracker configuration and run manifests.

Defaults come from the flat ``config.yaml`` at the repository root; a file
given on the command line (plain config or a previously written manifest)
overrides them, and command-line flags override both.

Key objects:
- `TrackerConfig`: every scalar of the tracker, validated by pydantic.
- `RunManifest`: config snapshot + sequence list + output directory + seed, written next to results.
- `load_config(path)` / `save_manifest(manifest, path)`.
"""

import logging
import os
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(__file__), "..", "config.yaml")
CHANNEL_GROUPS = ("gray", "hog", "cn")


class TrackerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lambda_: float = Field(1e-3, ge=0.0)
    gamma: float = Field(10.0, ge=0.0)
    base_score: float = Field(0.28, ge=0.0)
    stepsize: int = Field(8, ge=1)
    num_context_patches: int = Field(8, ge=0)
    mu0: float = Field(1.0, gt=0.0)
    beta: float = Field(10.0, ge=1.0)
    mu_max: float = Field(1000.0, gt=0.0)
    admm_iters: int = Field(2, ge=1)
    cell_size: int = Field(4, ge=1)
    search_area_scale: float = Field(2.0, gt=1.0)
    max_model_cells: int = Field(64 * 64, ge=4)
    number_of_scales: int = Field(5, ge=1)
    scale_step: float = Field(1.02, ge=1.0)
    scale_penalty: float = Field(0.995, gt=0.0, le=1.0)
    learning_rate: float = Field(0.013, ge=0.0, le=1.0)
    output_sigma_factor: float = Field(1.0 / 16, gt=0.0)
    channels: Tuple[Literal["gray", "hog", "cn"], ...] = ("gray", "hog", "cn")
    color_table: Optional[str] = None

    @field_validator("channels")
    @classmethod
    def _non_empty_channels(cls, v):
        if not v:
            raise ValueError("at least one feature channel group is required")
        if len(set(v)) != len(v):
            raise ValueError(f"duplicate channel groups in {v}")
        return v

    @property
    def is_baseline(self) -> bool:
        """True when neither the keyfilter term nor context learning is active."""
        return self.gamma == 0 and self.base_score == 0


class RunManifest(BaseModel):
    config: TrackerConfig
    sequences: List[str]
    output_dir: str
    seed: int = 0


def _read_yaml(path: str) -> Dict[str, Any]:
    with open(path, "r") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at top level")
    return data


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> TrackerConfig:
    """
    Build a TrackerConfig from defaults, an optional file and explicit overrides.

    ``path`` may point to a flat config file or to a run manifest, in which
    case its ``config`` mapping is used.
    """
    values: Dict[str, Any] = {}
    if os.path.isfile(DEFAULT_CONFIG_PATH):
        values.update(_read_yaml(DEFAULT_CONFIG_PATH))
    if path:
        data = _read_yaml(path)
        values.update(data.get("config", data) if "sequences" in data else data)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    config = TrackerConfig(**values)
    logger.debug("tracker config: %s", config.model_dump())
    return config


def save_manifest(manifest: RunManifest, path: str) -> str:
    with open(path, "w") as f:
        yaml.safe_dump(manifest.model_dump(mode="json"), f, sort_keys=False)
    return path


def load_manifest(path: str) -> RunManifest:
    return RunManifest(**_read_yaml(path))
