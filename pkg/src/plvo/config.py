"""Pipeline configuration and its JSON round trip."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .depth_filter import FilterConfig
from .errors import DatasetFormatError
from .line_fit import RansacConfig
from .robust_pose import SolverConfig

_NESTED = {"solver": SolverConfig, "ransac": RansacConfig, "filter": FilterConfig}


@dataclass
class PipelineConfig:
    mode: str = "A"
    depth_estimation: bool = True
    registration: bool = True
    seed: int = 0
    window_capacity: int = 8
    registration_uncertainty_max: float = 4e-4
    registration_near: float = 0.05
    validation_tol_px: float = 2.0
    arbitrary_depth: float = 1.0
    pixel_sigma: float = 1.0
    line_stride_px: int = 1
    min_line_length_px: float = 10.0
    fallback_cov_scale: float = 10.0
    initial_step_variance: float = 1e-6
    use_points: bool = True
    use_lines: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)

    def __post_init__(self):
        if self.mode not in ("A", "B"):
            raise ValueError(f"mode must be 'A' or 'B', got {self.mode!r}")
        if self.window_capacity < 1:
            raise ValueError("window_capacity must be at least 1")
        if self.fallback_cov_scale <= 0:
            raise ValueError("fallback_cov_scale must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DatasetFormatError(f"unknown config keys: {sorted(unknown)}")
        for key, sub in _NESTED.items():
            if key in d:
                sub_known = {f.name for f in dataclasses.fields(sub)}
                bad = set(d[key]) - sub_known
                if bad:
                    raise DatasetFormatError(f"unknown {key} keys: {sorted(bad)}")
                d[key] = sub(**d[key])
        return cls(**d)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def load_config(path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise DatasetFormatError("config must be a JSON object")
    try:
        return PipelineConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(str(exc)) from exc


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
