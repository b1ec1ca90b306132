"""Run configuration: one JSON document, unknown keys rejected."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

__all__ = ["SweepOptions", "RunConfig", "load_config", "parse_config", "ConfigError"]


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


class SweepOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mu1_points: int = Field(10, ge=1)
    alphas: list[float] = Field(default_factory=lambda: [1.0, 0.1, 0.01, 0.001], min_length=1)
    fixed: Optional[list[float]] = Field(None, min_length=2, max_length=2)
    pairing: Literal["c_m", "c_c"] = "c_m"

    @field_validator("alphas")
    @classmethod
    def _alphas_in_range(cls, v):
        bad = [a for a in v if not 0.0 < a <= 1.0]
        if bad:
            raise ValueError(f"alpha values must lie in (0, 1], got {bad}")
        return v


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem: Literal["graetz_distributed", "graetz_boundary"] = "graetz_distributed"
    mode: Literal["steady", "unsteady"] = "steady"
    nx: int = Field(10, ge=1, le=400)
    ny: int = Field(10, ge=1, le=400)
    T: float = Field(5.0, gt=0)
    n_t: int = Field(10, ge=1)
    alpha: Optional[float] = Field(None, gt=0, le=1)
    bound_case: Optional[Literal["control_bound", "observation_bound"]] = None
    control_scaling: Literal["pullback", "reference"] = "pullback"
    pairing: Literal["c_m", "c_c"] = "c_m"
    tol: float = Field(1e-4, gt=0)
    n_train: int = Field(225, ge=1)
    max_iters: int = Field(25, ge=1)
    n_test: int = Field(20, ge=0)
    seed: int = 0
    with_exact: bool = False
    out_dir: str = "out"
    extrapolate: bool = False
    mu: Optional[list[float]] = Field(None, min_length=3, max_length=3)
    online_mus: list[list[float]] = Field(default_factory=list)
    sweep: SweepOptions = Field(default_factory=SweepOptions)

    @field_validator("online_mus")
    @classmethod
    def _triples(cls, v):
        for i, m in enumerate(v):
            if len(m) != 3:
                raise ValueError(f"online_mus[{i}] must have 3 components, got {len(m)}")
        return v

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


def load_config(path) -> RunConfig:
    """Parse a JSON file; every failure is raised as :class:`ConfigError`."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(data)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            msgs.append(f"{loc}: {err['msg']}")
        raise ConfigError("invalid config: " + "; ".join(msgs)) from exc
