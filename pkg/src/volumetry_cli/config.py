import hashlib
import json
import logging
import os
from collections.abc import Mapping
from pathlib import Path
from typing import Any, Literal

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from volumetry_core.constants import CLIP_FRACTION, LABEL_THRESHOLD, N_TRIM, PAD_SHAPE, Rating, SegmenterKind
from volumetry_core.exceptions import ConfigError
from volumetry_core.qc import FlaggingPolicy
from volumetry_core.segmenter import SegmenterSpec

# Operational keys: they never change results and stay out of the config hash
OPERATIONAL_KEYS = frozenset({"WORKERS", "LOG_LEVEL", "LOG_DIR"})
ENV_OVERRIDES = ("LOG_LEVEL", "LOG_DIR")


class PipelineSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    N_TRIM: int = N_TRIM
    CLIP_FRACTION: float = CLIP_FRACTION
    PAD_SHAPE: tuple[int, int] = PAD_SHAPE
    CONNECTIVITY: int = 6
    BLEND_SCHEME: Literal["linear"] = "linear"
    LABEL_THRESHOLD: float = LABEL_THRESHOLD
    SEGMENTER: SegmenterKind = SegmenterKind.EXTERNAL_MASKS
    MASK_DIR: str = ""
    THRESHOLD_FRACTION: float = 0.5
    STAGE1_LOCATION: float = 0.01
    STAGE1_IMAGE_FUSION: float = 0.01
    STAGE1_SEGMENTATION_FUSION: float = 0.02
    STAGE2_SMOOTHNESS: float = 0.01
    STAGE2_SCRAP: float = 0.01
    FLAG_ON_NORMALIZED: bool = True
    AUTO_REINCLUDE: bool = True
    WORKERS: int = 1
    LOG_LEVEL: str = "INFO"
    LOG_DIR: str = "logs"

    @field_validator("N_TRIM")
    @classmethod
    def trim_not_negative(cls, v):
        if v < 0:
            raise ValueError("N_TRIM must be >= 0")
        return v

    @field_validator("CLIP_FRACTION")
    @classmethod
    def clip_in_range(cls, v):
        if not 0.0 <= v < 0.5:
            raise ValueError("CLIP_FRACTION must be in [0, 0.5)")
        return v

    @field_validator("PAD_SHAPE", mode="before")
    @classmethod
    def parse_pad_shape(cls, v):
        if isinstance(v, str):
            parts = v.lower().replace(" ", "").split("x")
            if len(parts) != 2 or not all(p.isdigit() for p in parts):
                raise ValueError("PAD_SHAPE must look like 224x192")
            return (int(parts[0]), int(parts[1]))
        return v

    @field_validator("CONNECTIVITY")
    @classmethod
    def connectivity_supported(cls, v):
        if v not in (6, 26):
            raise ValueError("CONNECTIVITY must be 6 or 26")
        return v

    @field_validator("LABEL_THRESHOLD", "THRESHOLD_FRACTION")
    @classmethod
    def threshold_in_range(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError("thresholds must be in [0, 1)")
        return v

    @field_validator(
        "STAGE1_LOCATION",
        "STAGE1_IMAGE_FUSION",
        "STAGE1_SEGMENTATION_FUSION",
        "STAGE2_SMOOTHNESS",
        "STAGE2_SCRAP",
    )
    @classmethod
    def fraction_in_range(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("flagging fractions must be in (0, 1)")
        return v

    @field_validator("WORKERS")
    @classmethod
    def workers_positive(cls, v):
        if v < 1:
            raise ValueError("WORKERS must be >= 1")
        return v

    @field_validator("LOG_LEVEL")
    @classmethod
    def known_level(cls, v):
        level = str(v).upper()
        if level not in logging.getLevelNamesMapping():
            raise ValueError(f"unknown log level {v}")
        return level

    def flagging_policy(self) -> FlaggingPolicy:
        return FlaggingPolicy(
            stage1={
                Rating.LOCATION: self.STAGE1_LOCATION,
                Rating.IMAGE_FUSION: self.STAGE1_IMAGE_FUSION,
                Rating.SEGMENTATION_FUSION: self.STAGE1_SEGMENTATION_FUSION,
            },
            stage2={Rating.SMOOTHNESS: self.STAGE2_SMOOTHNESS, Rating.SCRAP: self.STAGE2_SCRAP},
            use_normalized=self.FLAG_ON_NORMALIZED,
            auto_reinclude=self.AUTO_REINCLUDE,
        )

    def segmenter_spec(self, mask_paths: Mapping[tuple[str, int], str] | None = None) -> SegmenterSpec:
        if self.SEGMENTER is SegmenterKind.THRESHOLD_BASELINE:
            params: dict[str, Any] = {
                "threshold": self.THRESHOLD_FRACTION,
                "clip_fraction": self.CLIP_FRACTION,
                "pad_shape": self.PAD_SHAPE,
            }
        else:
            params = {"mask_dir": self.MASK_DIR or None, "n_trim": self.N_TRIM, "mask_paths": dict(mask_paths or {})}
        return SegmenterSpec(self.SEGMENTER, params)

    def result_settings(self) -> dict[str, Any]:
        """Every setting that can change a report, JSON-ready."""
        data = self.model_dump(mode="json")
        return {k: v for k, v in sorted(data.items()) if k not in OPERATIONAL_KEYS}

    def config_hash(self) -> str:
        canonical = json.dumps(self.result_settings(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_settings(
    path: str | Path | None = None,
    environ: Mapping[str, str] | None = None,
    **overrides: Any,
) -> PipelineSettings:
    """
    Read a ``KEY = value`` config file, apply environment and explicit overrides, and validate.

    Raises:
        ConfigError: If the file is missing, has unknown keys or holds invalid values.
    """
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Configuration Error: config file {path} not found")
        values.update({k.upper(): v for k, v in dotenv_values(path).items() if v is not None and v != ""})

    environ = os.environ if environ is None else environ
    for key in ENV_OVERRIDES:
        if environ.get(key):
            values[key] = environ[key]
    values.update({k: v for k, v in overrides.items() if v is not None})

    try:
        return PipelineSettings(**values)
    except ValidationError as e:
        raise ConfigError(f"Configuration Error: {e}") from e
