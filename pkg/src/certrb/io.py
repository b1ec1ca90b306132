"""CSV tables and reduced-model files."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .mesh import Mesh
from .problems import OcpProblem, ParameterBox, StabilityConstants
from .rb import ErrorReport, GreedyHistory, ReducedModel
from .spacetime import Snapshot
from .stability import StabilityReport

__all__ = [
    "SchemaError",
    "FORMAT_VERSION",
    "GREEDY_COLUMNS",
    "ERROR_COLUMNS",
    "SWEEP_COLUMNS",
    "SNAPSHOT_COLUMNS",
    "ONLINE_COLUMNS",
    "fmt",
    "write_csv",
    "read_csv",
    "write_greedy_history",
    "write_error_table",
    "read_error_table",
    "write_sweep",
    "write_snapshot",
    "write_mesh",
    "save_model",
    "load_model",
]

FORMAT_VERSION = 1
GREEDY_COLUMNS = ("iteration", "N", "mu1", "mu2", "mu3", "delta_max")
ERROR_COLUMNS = ("N", "err_rel", "err_abs", "delta_mean", "eta_mean", "bound_kind")
SWEEP_COLUMNS = ("mu1", "mu2", "mu3", "alpha", "beta_lb", "beta_exact", "ratio", "mode")
SNAPSHOT_COLUMNS = ("time_index", "node_index", "y", "p")
ONLINE_COLUMNS = ("mu1", "mu2", "mu3", "cost", "delta_N", "solve_time")


class SchemaError(ValueError):
    """A CSV file lacks required columns."""


def fmt(value) -> str:
    """Six significant digits in scientific notation; ints and strings verbatim."""
    if isinstance(value, (bool, np.bool_)):
        return str(value).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.5e}"
    return str(value)


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path, required=()) -> list[dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


def write_greedy_history(path, history: GreedyHistory) -> Path:
    rows = [(r.iteration, r.N, *r.mu, r.delta_max) for r in history.records]
    return write_csv(path, GREEDY_COLUMNS, rows)


def write_error_table(path, report: ErrorReport) -> Path:
    rows = [tuple(r[c] for c in ERROR_COLUMNS) for r in report.rows()]
    return write_csv(path, ERROR_COLUMNS, rows)


def read_error_table(path) -> list[dict]:
    rows = read_csv(path, ERROR_COLUMNS)
    out = []
    for r in rows:
        out.append({
            "N": int(r["N"]),
            "err_rel": float(r["err_rel"]),
            "err_abs": float(r["err_abs"]),
            "delta_mean": float(r["delta_mean"]),
            "eta_mean": float(r["eta_mean"]),
            "bound_kind": r["bound_kind"],
        })
    return out


def write_sweep(path, report: StabilityReport) -> Path:
    rows = [(*r.mu, r.alpha, r.beta_lb, r.beta_exact, r.ratio, r.mode) for r in report.rows]
    return write_csv(path, SWEEP_COLUMNS, rows)


def write_snapshot(path, problem: OcpProblem, snapshot: Snapshot) -> Path:
    """Nodal fields with the Dirichlet lifting re-added to the state."""
    Y, P = snapshot.fields(problem)
    n_t, n = Y.shape
    t = np.repeat(np.arange(n_t), n)
    i = np.tile(np.arange(n), n_t)
    rows = zip(t.tolist(), i.tolist(), Y.ravel(), P.ravel())
    return write_csv(path, SNAPSHOT_COLUMNS, rows)


def write_mesh(directory, mesh: Mesh) -> tuple[Path, Path]:
    d = Path(directory)
    nodes = write_csv(
        d / "mesh_nodes.csv",
        ("node_index", "x", "y"),
        ((k, x, y) for k, (x, y) in enumerate(mesh.nodes)),
    )
    tris = write_csv(
        d / "mesh_triangles.csv",
        ("triangle_index", "n0", "n1", "n2", "subdomain"),
        ((k, *t.tolist(), s) for k, (t, s) in enumerate(zip(mesh.triangles, mesh.subdomain))),
    )
    return nodes, tris


def save_model(path, model: ReducedModel) -> Path:
    """``.npz`` container: arrays plus a JSON provenance header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = model.cost_data
    header = {
        "format_version": FORMAT_VERSION,
        "problem_id": model.problem_id,
        "mode": model.mode,
        "alpha": model.alpha,
        "n_t": model.n_t,
        "dt": model.dt,
        "T": model.T,
        "bound_case": model.bound_case,
        "pairing": model.pairing,
        "constants": model.constants.to_dict(),
        "box": [list(model.box.lower), list(model.box.upper)],
        "sizes": list(model.sizes),
        "b_keys": list(model.b_keys),
        "f_keys": list(model.f_keys),
        "cost_pieces": [list(p) for p in d["pieces"]],
        "cost_c_keys": list(d["c_keys"]),
        "mesh_signature": model.mesh_signature,
        "meta": model.meta,
        "extrapolate": model.extrapolate,
    }
    C = model.n_columns
    arrays = {
        "header": np.array(json.dumps(header, sort_keys=True)),
        "basis": model.basis,
        "Bn": model.Bn,
        "Fn": model.Fn,
        "R": model.R,
        "cost_H": np.array(d["H"]).reshape(-1, C, C),
        "cost_hg": np.array(d["hg"]).reshape(-1, C),
        "cost_h1": np.array(d["h1"]).reshape(-1, C),
        "cost_scal": np.array(d["scal"], dtype=float).reshape(-1, 3),
        "cost_Hc": np.array(d["Hc"]).reshape(-1, C, C),
    }
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_model(path) -> ReducedModel:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {header.get('format_version')!r}")
        arr = {k: z[k] for k in z.files if k != "header"}
    k = header["constants"]
    cost = {
        "pieces": [tuple(p) for p in header["cost_pieces"]],
        "H": list(arr["cost_H"]),
        "hg": list(arr["cost_hg"]),
        "h1": list(arr["cost_h1"]),
        "scal": [tuple(float(v) for v in s) for s in arr["cost_scal"]],
        "c_keys": list(header["cost_c_keys"]),
        "Hc": list(arr["cost_Hc"]),
    }
    return ReducedModel(
        problem_id=header["problem_id"],
        mode=header["mode"],
        alpha=header["alpha"],
        n_t=header["n_t"],
        dt=header["dt"],
        T=header["T"],
        bound_case=header["bound_case"],
        pairing=header["pairing"],
        constants=StabilityConstants(k["problem_id"], k["C_omega"], k["C_gamma"], k["control_scaling"]),
        box=ParameterBox(tuple(header["box"][0]), tuple(header["box"][1])),
        basis=arr["basis"],
        sizes=list(header["sizes"]),
        b_keys=list(header["b_keys"]),
        f_keys=list(header["f_keys"]),
        Bn=arr["Bn"],
        Fn=arr["Fn"],
        R=arr["R"],
        cost_data=cost,
        mesh_signature=header["mesh_signature"],
        meta=header["meta"],
        extrapolate=header["extrapolate"],
    )
