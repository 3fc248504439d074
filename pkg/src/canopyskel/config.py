"""Aggregate run configuration with JSON persistence.

One object carries every tunable of the pipeline — grid resolution, kernel
shape, smoothing, path search, baseline thresholds, generator and
occlusion parameters, seeds — and validates all of them on construction
(each sub-config enforces its own invariants). The JSON form mirrors the
dataclass structure one-to-one.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Tuple

from .baselines import FtsemConfig
from .likelihood import EllipsoidKernelConfig
from .segment_fit import FitConfig
from .skeleton import PathSearchConfig, SmoothingConfig
from .synthgen import OcclusionParams, TreeGenParams

__all__ = ["ConfigError", "PipelineConfig", "load_config", "save_config", "METHODS"]

METHODS = ("likelihood", "mst", "ftsem")


class ConfigError(ValueError):
    """Configuration file or value rejected."""


@dataclass
class PipelineConfig:
    voxel_size: float = 0.02
    kernel: EllipsoidKernelConfig = field(default_factory=EllipsoidKernelConfig)
    # Pooled multi-view clusters already fit on-axis, so smoothing only has
    # to iron out per-chain spline wiggle: a small neighborhood and few
    # iterations, or fork regions blur and chain ends erode inward.
    smoothing: SmoothingConfig = field(
        default_factory=lambda: SmoothingConfig(neighbors_k=4, max_iterations=3)
    )
    # Unbounded joining chains distant fragments through near-zero evidence;
    # capping path cost keeps bridges on corridors the kernels actually
    # support (a few voxels at fused probability ~0.9, like a severed twig's
    # two halves) while refusing speculative long hops.
    path_search: PathSearchConfig = field(
        default_factory=lambda: PathSearchConfig(max_path_cost=0.6)
    )
    ftsem: FtsemConfig = field(default_factory=FtsemConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    tree: TreeGenParams = field(default_factory=TreeGenParams)
    occlusion: OcclusionParams = field(default_factory=OcclusionParams)
    master_seed: int = 0
    n_trees: int = 10
    density_levels: Tuple[int, ...] = (1, 2, 3, 4)
    n_viewpoints: int = 4

    def __post_init__(self) -> None:
        self.voxel_size = float(self.voxel_size)
        if not (self.voxel_size > 0.0):
            raise ConfigError(f"voxel_size must be positive, got {self.voxel_size}")
        self.master_seed = int(self.master_seed)
        self.n_trees = int(self.n_trees)
        if self.n_trees < 0:
            raise ConfigError("n_trees must be >= 0")
        self.density_levels = tuple(int(d) for d in self.density_levels)
        if not self.density_levels:
            raise ConfigError("density_levels must not be empty")
        for d in self.density_levels:
            if d not in (1, 2, 3, 4):
                raise ConfigError(f"density level {d} outside 1..4")
        self.n_viewpoints = int(self.n_viewpoints)
        if self.n_viewpoints < 1:
            raise ConfigError("n_viewpoints must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError(f"config root must be an object, got {type(data).__name__}")
        nested = {
            "kernel": EllipsoidKernelConfig,
            "smoothing": SmoothingConfig,
            "path_search": PathSearchConfig,
            "ftsem": FtsemConfig,
            "fit": FitConfig,
            "tree": TreeGenParams,
            "occlusion": OcclusionParams,
        }
        kwargs = {}
        known = {f.name for f in dataclasses.fields(cls)}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if key in nested:
                if not isinstance(value, dict):
                    raise ConfigError(f"config section {key!r} must be an object")
                try:
                    kwargs[key] = nested[key](**value)
                except TypeError as exc:
                    raise ConfigError(f"bad field in section {key!r}: {exc}") from None
                except ValueError as exc:
                    raise ConfigError(f"invalid {key!r} section: {exc}") from None
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None


def load_config(path) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return PipelineConfig.from_dict(data)


def save_config(path, config: PipelineConfig) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
