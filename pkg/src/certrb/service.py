"""HTTP front end for online evaluation of saved reduced models.

Run with ``uvicorn certrb.service:app``. Models are loaded on first use and
cached by path and modification time, so many clients can query the same
model cheaply; offline work (greedy, sweeps) stays in the CLI.
"""

from __future__ import annotations

import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException

from . import __version__
from .io import load_model
from .mesh import build_structured_mesh
from .problems import make_problem
from .rb import ReducedModel
from .schemas import (
    BetaRequest,
    BetaResponse,
    Health,
    MeshInfoRequest,
    MeshInfoResponse,
    OnlineRequest,
    OnlineResponse,
    OnlineRow,
)
from .spacetime import NumericalError
from .stability import beta_lb
from .workflow import run_online

_cache: dict[tuple[str, float], ReducedModel] = {}
_lock = threading.Lock()


def _model(path: str) -> ReducedModel:
    p = Path(path).resolve()
    if not p.is_file():
        raise HTTPException(status_code=404, detail=f"model file {path} not found")
    key = (str(p), p.stat().st_mtime)
    with _lock:
        if key not in _cache:
            try:
                _cache[key] = load_model(p)
            except (ValueError, KeyError, OSError) as exc:
                raise HTTPException(status_code=422, detail=f"cannot load model: {exc}") from exc
        return _cache[key]


def create_app() -> FastAPI:
    app = FastAPI(title="certrb", version=__version__)

    @app.get("/health", response_model=Health)
    def health():
        return Health(version=__version__, models_loaded=len(_cache))

    @app.post("/online", response_model=OnlineResponse)
    def online(req: OnlineRequest):
        model = _model(req.model_path)
        for m in req.mus:
            if len(m) != 3:
                raise HTTPException(status_code=422, detail=f"parameter {m} must have 3 components")
        try:
            results = run_online(model, req.mus, req.N)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except NumericalError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        return OnlineResponse(
            problem=model.problem_id,
            mode=model.mode,
            N=req.N or model.N,
            bound_case=model.bound_case,
            rows=[OnlineRow(mu=list(r.mu), cost=r.cost, delta_N=r.delta_N, beta_lb=r.beta_lb,
                            solve_time=r.solve_time) for r in results],
        )

    @app.post("/beta-lb", response_model=BetaResponse)
    def lower_bound(req: BetaRequest):
        kwargs = {}
        if req.problem == "graetz_boundary":
            kwargs["control_scaling"] = req.control_scaling
        try:
            problem = make_problem(req.problem, req.nx, req.ny, **kwargs)
            mu = np.asarray(req.mu, dtype=float)
            value = beta_lb(problem, mu, req.alpha, req.bound_case)
            gamma = problem.constants.gamma_a(problem.check_mu(mu))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return BetaResponse(beta_lb=value, gamma_a=gamma, bound_case=req.bound_case or problem.bound_case)

    @app.post("/mesh-info", response_model=MeshInfoResponse)
    def mesh_info(req: MeshInfoRequest):
        mesh = build_structured_mesh(req.nx, req.ny, req.problem)
        areas = mesh.signed_areas()
        sub = {str(t): float(areas[mesh.subdomain == t].sum()) for t in np.unique(mesh.subdomain)}
        return MeshInfoResponse(
            n_nodes=mesh.n_nodes,
            n_triangles=mesh.n_triangles,
            n_boundary_edges=len(mesh.edges),
            area=float(areas.sum()),
            signature=mesh.signature(),
            subdomain_areas=sub,
        )

    return app


app = create_app()
