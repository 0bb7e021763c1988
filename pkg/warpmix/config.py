from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Optional, Union

from .constants import (
    DEFAULT_DIRICHLET_ALPHA,
    DEFAULT_MAX_ITERS,
    DEFAULT_OCCUPANCY_THRESHOLD,
    DEFAULT_TOL,
    DEFAULT_VARIANCE_FLOOR_FRAC,
)
from .curves import CurveSet


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ModelConfig:
    k: int = 3
    max_shift: int = 1
    max_skip: int = 0
    allow_stay: bool = False
    grid_len: Optional[int] = None
    offsets_enabled: bool = False
    dirichlet_alpha: float = DEFAULT_DIRICHLET_ALPHA
    variance_floor_frac: float = DEFAULT_VARIANCE_FLOOR_FRAC
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    tie_transitions: bool = True
    occupancy_threshold: float = DEFAULT_OCCUPANCY_THRESHOLD
    origin_search: bool = False

    @property
    def n_steps(self) -> int:
        # step offsets 0 (stay), 1 (advance), 2..S+1 (skips)
        return self.max_skip + 2

    @property
    def is_linear(self) -> bool:
        return self.max_skip == 0 and not self.allow_stay

    def with_overrides(self, **kwargs: Any) -> ModelConfig:
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        # json has no infinity literal worth relying on
        if math.isinf(data["tol"]):
            data["tol"] = "inf"
        return data

    @staticmethod
    def from_dict(data: dict[str, Any]) -> ModelConfig:
        known = {f.name for f in fields(ModelConfig)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError([f"unknown config key {key!r}" for key in sorted(unknown)])
        data = dict(data)
        if "tol" in data:
            data["tol"] = float(data["tol"])
        return ModelConfig(**data)

    @staticmethod
    def load(path: Union[str, Path]) -> ModelConfig:
        with open(path, mode="r", encoding="utf-8") as file:
            try:
                data = json.load(file)
            except json.JSONDecodeError as e:
                raise ConfigError([f"{path} is not a JSON config: {e}"]) from e
        return ModelConfig.from_dict(data)

    def save(self, path: Union[str, Path]) -> None:
        with open(path, mode="w", encoding="utf-8") as file:
            json.dump(self.to_dict(), file, indent=2)


def default_grid_length(max_shift: int, max_skip: int, l_max: int) -> int:
    """Shortest grid on which a maximally skipping path from the last start fits."""
    return max_shift + (l_max - 1) * (max_skip + 1)


def validate_config(cfg: ModelConfig, data: CurveSet) -> ModelConfig:
    errors = []
    if len(data) == 0:
        errors.append("dataset is empty")
    if cfg.k < 1:
        errors.append(f"component count must be >= 1, got {cfg.k}")
    if cfg.max_shift < 1:
        errors.append(f"max_shift must be >= 1, got {cfg.max_shift}")
    if cfg.max_skip < 0:
        errors.append(f"max_skip must be >= 0, got {cfg.max_skip}")
    if not cfg.tol > 0:
        errors.append(f"tolerance must be positive, got {cfg.tol}")
    if cfg.max_iters < 1:
        errors.append(f"max_iters must be >= 1, got {cfg.max_iters}")
    if cfg.dirichlet_alpha < 0:
        errors.append(f"dirichlet_alpha must be >= 0, got {cfg.dirichlet_alpha}")
    if not cfg.variance_floor_frac > 0:
        errors.append(
            f"variance_floor_frac must be positive, got {cfg.variance_floor_frac}"
        )
    if cfg.occupancy_threshold < 0:
        errors.append(
            f"occupancy_threshold must be >= 0, got {cfg.occupancy_threshold}"
        )
    if errors:
        raise ConfigError(errors)

    l_max = data.l_max
    grid_len = cfg.grid_len
    if grid_len is None:
        grid_len = default_grid_length(cfg.max_shift, cfg.max_skip, l_max)
    elif grid_len < cfg.max_shift - 1 + l_max:
        raise ConfigError(
            [
                f"grid too short: grid_len={grid_len} < max_shift - 1 + l_max = "
                f"{cfg.max_shift - 1 + l_max}"
            ]
        )
    return replace(cfg, grid_len=grid_len)
