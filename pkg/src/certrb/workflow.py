"""Glue between a :class:`RunConfig` and the numerical modules."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .mesh import build_structured_mesh
from .problems import OcpProblem, make_problem
from .rb import ReducedModel, delta_N, reduced_solve
from .spacetime import TimeGrid

__all__ = ["problem_from_config", "grid_from_config", "OnlineResult", "run_online", "check_model_mesh"]


def problem_from_config(cfg: RunConfig) -> OcpProblem:
    kwargs = {"extrapolate": cfg.extrapolate}
    if cfg.alpha is not None:
        kwargs["alpha"] = cfg.alpha
    if cfg.problem == "graetz_boundary":
        kwargs["control_scaling"] = cfg.control_scaling
        if cfg.bound_case is not None:
            kwargs["bound_case"] = cfg.bound_case
    elif cfg.bound_case not in (None, "control_bound"):
        raise ValueError(f"bound case {cfg.bound_case!r} does not apply to {cfg.problem}")
    return make_problem(cfg.problem, cfg.nx, cfg.ny, **kwargs)


def grid_from_config(cfg: RunConfig) -> TimeGrid | None:
    return TimeGrid(cfg.T, cfg.n_t) if cfg.mode == "unsteady" else None


def check_model_mesh(model: ReducedModel, cfg: RunConfig) -> None:
    """Raise if the model was not built on the mesh described by ``cfg``."""
    if model.problem_id != cfg.problem:
        raise ValueError(f"model solves {model.problem_id!r}, config asks for {cfg.problem!r}")
    sig = build_structured_mesh(cfg.nx, cfg.ny, cfg.problem).signature()
    if sig != model.mesh_signature:
        raise ValueError(
            f"model mesh {model.mesh_signature} does not match config mesh {sig} (nx={cfg.nx}, ny={cfg.ny})"
        )


@dataclass(frozen=True)
class OnlineResult:
    mu: tuple[float, ...]
    cost: float
    delta_N: float
    beta_lb: float
    solve_time: float


def run_online(model: ReducedModel, mus, N: int | None = None) -> list[OnlineResult]:
    """Certified reduced evaluations; ``solve_time`` covers solve, estimator and cost."""
    out = []
    for mu in mus:
        mu = model.check_mu(np.asarray(mu, dtype=float))
        t0 = time.perf_counter()
        c = reduced_solve(model, mu, N)
        beta = model.beta_lb(mu)
        d = delta_N(model, mu, c, beta)
        J = model.cost(mu, c)
        dt = time.perf_counter() - t0
        out.append(OnlineResult(tuple(float(v) for v in mu), J, d, beta, dt))
    return out
