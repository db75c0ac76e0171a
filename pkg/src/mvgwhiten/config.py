"""Declarative pipeline configuration.

One JSON document drives every stage, so an experiment is reproducible from
its config alone. Field defaults carry the method's published constants
(alpha 0.5, percentile 99, FPR cap 0.3, relative eigenvalue floor 1e-10).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class PipelineConfig:
    manifest_path: str = ""
    layers: list[str] | None = None  # None = every layer in the manifest
    floor_rel: float = 1e-10
    percentile: float = 99.0
    alpha: float = 0.5
    fpr_limit: float = 0.3
    mask_threshold: int = 127
    k_lowest: int = 3
    k_highest: int = 3
    components: list[int] | None = None  # explicit selection overrides k_lowest/k_highest
    scale_strategies: list[str] = field(
        default_factory=lambda: ["per_component", "cross_component", "score_map"]
    )
    output_dir: str = "out"
    save_y_sq: bool = True
    images_per_page: int = 4
    max_images: int | None = 8
    deterministic: bool = True
    threads: int = 1

    def validate(self) -> None:
        if not self.manifest_path:
            raise ConfigError("config is missing manifest_path")
        if self.layers is not None and not self.layers:
            raise ConfigError("layers must be omitted/null or a non-empty list")
        if not self.floor_rel > 0:
            raise ConfigError(f"floor_rel must be positive, got {self.floor_rel}")
        if not 0.0 < self.percentile <= 100.0:
            raise ConfigError(f"percentile must be in (0, 100], got {self.percentile}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 < self.fpr_limit <= 1.0:
            raise ConfigError(f"fpr_limit must be in (0, 1], got {self.fpr_limit}")
        if self.k_lowest < 0 or self.k_highest < 0:
            raise ConfigError("k_lowest and k_highest must be non-negative")
        unknown = set(self.scale_strategies) - {"per_component", "cross_component", "score_map"}
        if unknown:
            raise ConfigError(f"unknown scale strategies: {sorted(unknown)}")
        if self.images_per_page < 1:
            raise ConfigError("images_per_page must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def load_config(path: str | Path) -> PipelineConfig:
    """Read a config JSON file; unknown keys are rejected to catch typos."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = PipelineConfig(**doc)
    # resolve the manifest relative to the config file, like everything else
    if cfg.manifest_path and not Path(cfg.manifest_path).is_absolute():
        cfg.manifest_path = str(path.parent / cfg.manifest_path)
    cfg.validate()
    return cfg
