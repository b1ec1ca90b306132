"""Request and response models of the HTTP service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

ProblemId = Literal["graetz_distributed", "graetz_boundary"]
Triple = list[float]


class Health(BaseModel):
    status: str = "ok"
    version: str
    models_loaded: int


class OnlineRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model_path: str
    mus: list[Triple] = Field(default_factory=list)
    N: Optional[int] = Field(None, ge=1)


class OnlineRow(BaseModel):
    mu: Triple
    cost: float
    delta_N: float
    beta_lb: float
    solve_time: float


class OnlineResponse(BaseModel):
    problem: str
    mode: str
    N: int
    bound_case: str
    rows: list[OnlineRow]


class BetaRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem: ProblemId = "graetz_distributed"
    nx: int = Field(10, ge=1, le=200)
    ny: int = Field(10, ge=1, le=200)
    mu: Triple
    alpha: float = Field(gt=0, le=1)
    bound_case: Optional[Literal["control_bound", "observation_bound"]] = None
    control_scaling: Literal["pullback", "reference"] = "pullback"


class BetaResponse(BaseModel):
    beta_lb: float
    gamma_a: float
    bound_case: str


class MeshInfoRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem: ProblemId = "graetz_distributed"
    nx: int = Field(10, ge=1, le=400)
    ny: int = Field(10, ge=1, le=400)


class MeshInfoResponse(BaseModel):
    n_nodes: int
    n_triangles: int
    n_boundary_edges: int
    area: float
    signature: str
    subdomain_areas: dict[str, float]
