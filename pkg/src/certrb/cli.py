"""Command line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .constants import ConvergenceError
from .io import (
    ONLINE_COLUMNS,
    SchemaError,
    load_model,
    read_error_table,
    save_model,
    write_csv,
    write_error_table,
    write_greedy_history,
    write_mesh,
    write_snapshot,
    write_sweep,
)
from .problems import default_training_set
from .rb import error_analysis, greedy_build
from .spacetime import (
    NumericalError,
    assemble_hf_system,
    assemble_steady_system,
    cost_functional,
    solve_hf,
)
from .stability import infsup_sweep
from .workflow import check_model_mesh, grid_from_config, problem_from_config, run_online

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _out(cfg: RunConfig, args) -> Path:
    d = Path(args.out or cfg.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _model_path(cfg, args) -> Path:
    return Path(args.model) if args.model else _out(cfg, args) / "model.npz"


def cmd_mesh_info(cfg: RunConfig, args) -> int:
    problem = problem_from_config(cfg)
    mesh = problem.mesh
    areas = mesh.signed_areas()
    print(f"problem {cfg.problem}: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles, "
          f"{problem.fe.n_free} free dofs, area {areas.sum():.6g}")
    for tag in sorted(set(mesh.subdomain)):
        print(f"  subdomain {tag}: area {areas[mesh.subdomain == tag].sum():.6g}")
    k = problem.constants
    line = f"  Poincare constant {k.C_omega:.6e}"
    if k.C_gamma is not None:
        line += f", trace constant {k.C_gamma:.6e}"
    print(line)
    nodes, tris = write_mesh(_out(cfg, args), mesh)
    print(f"wrote {nodes} and {tris}")
    return EXIT_OK


def cmd_hf_solve(cfg: RunConfig, args) -> int:
    problem = problem_from_config(cfg)
    alpha = cfg.alpha or problem.alpha_default
    mu = np.asarray(args.mu or cfg.mu or problem.box.midpoint, dtype=float)
    grid = grid_from_config(cfg)
    t0 = time.perf_counter()
    if grid is None:
        system = assemble_steady_system(problem, mu, alpha)
    else:
        system = assemble_hf_system(problem, mu, grid, alpha)
    snap = solve_hf(system)
    elapsed = time.perf_counter() - t0
    J = cost_functional(problem, mu, alpha, snap, system.dt)
    path = write_snapshot(_out(cfg, args) / "snapshot.csv", problem, snap)
    print(f"hf-solve mu={mu.tolist()} dim={system.dim} cost={J:.6e} "
          f"residual={snap.residual:.2e} time={elapsed:.3f}s -> {path}")
    return EXIT_OK


def cmd_greedy(cfg: RunConfig, args) -> int:
    problem = problem_from_config(cfg)
    train = default_training_set(problem, cfg.n_train)
    model, history = greedy_build(
        problem, train, cfg.tol, cfg.max_iters, bound_case=cfg.bound_case,
        alpha=cfg.alpha, grid=grid_from_config(cfg), pairing=cfg.pairing,
        log=(lambda s: print(s, file=sys.stderr)) if args.verbose else None,
    )
    out = _out(cfg, args)
    write_greedy_history(out / "greedy_history.csv", history)
    path = save_model(_model_path(cfg, args), model)
    status = "converged" if history.converged else ("stagnated" if history.stagnated else "iteration cap reached")
    print(f"greedy {status}: N={model.N} max delta={history.final_delta:.6e} "
          f"offline time={history.wall_time:.2f}s training points={len(train)} model={path}")
    if history.stagnated:
        return EXIT_NUMERICAL
    return EXIT_OK


def _online_remote(server: str, model_path: str, mus, N):
    import httpx

    resp = httpx.post(server.rstrip("/") + "/online",
                      json={"model_path": model_path, "mus": [list(m) for m in mus], "N": N}, timeout=600)
    if resp.status_code == 422 or resp.status_code == 404:
        raise ConfigError(f"server rejected request: {resp.json().get('detail')}")
    if resp.status_code != 200:
        raise NumericalError(f"server error {resp.status_code}: {resp.text}")
    return resp.json()["rows"]


def cmd_online(cfg: RunConfig, args) -> int:
    mus = [list(m) for m in (args.mu_list or cfg.online_mus)]
    path = _model_path(cfg, args)
    if args.server:
        rows = _online_remote(args.server, str(path), mus, args.N)
        table = [(*r["mu"], r["cost"], r["delta_N"], r["solve_time"]) for r in rows]
    else:
        if not path.is_file():
            raise ConfigError(f"model file {path} not found")
        model = load_model(path)
        check_model_mesh(model, cfg)
        results = run_online(model, mus, args.N)
        table = [(*r.mu, r.cost, r.delta_N, r.solve_time) for r in results]
    out = write_csv(_out(cfg, args) / "online.csv", ONLINE_COLUMNS, table)
    msg = f"online: {len(table)} evaluations -> {out}"
    if table:
        mean_t = float(np.mean([r[-1] for r in table]))
        msg += f", mean solve time {mean_t * 1e3:.3f} ms"
        if args.speedup and not args.server:
            problem = problem_from_config(cfg)
            alpha = cfg.alpha or problem.alpha_default
            grid = grid_from_config(cfg)
            t0 = time.perf_counter()
            mu0 = np.asarray(mus[0])
            system = (assemble_steady_system(problem, mu0, alpha) if grid is None
                      else assemble_hf_system(problem, mu0, grid, alpha))
            solve_hf(system)
            hf = time.perf_counter() - t0
            msg += f", HF solve {hf:.3f}s, speedup {hf / mean_t:.1f}"
    print(msg)
    return EXIT_OK


def cmd_analyze(cfg: RunConfig, args) -> int:
    if cfg.n_test < 1:
        raise ConfigError("n_test must be >= 1 for error analysis")
    problem = problem_from_config(cfg)
    model = load_model(_model_path(cfg, args))
    check_model_mesh(model, cfg)
    test = problem.box.sample(cfg.n_test, np.random.default_rng(cfg.seed))
    report = error_analysis(model, problem, test, with_exact=cfg.with_exact)
    path = write_error_table(_out(cfg, args) / "error_table.csv", report)
    eta_min = float(report.eta.min())
    print(f"analyze: {cfg.n_test} test parameters, N=1..{model.N}, min effectivity {eta_min:.3e} -> {path}")
    return EXIT_OK if eta_min >= 1.0 - 1e-8 else EXIT_NUMERICAL


def cmd_sweep(cfg: RunConfig, args) -> int:
    problem = problem_from_config(cfg)
    opts = cfg.sweep
    box = problem.box
    mu1 = np.linspace(box.lower[0], box.upper[0], opts.mu1_points) if opts.mu1_points > 1 else [box.midpoint[0]]
    report = infsup_sweep(problem, mu1, opts.alphas, opts.fixed, cfg.mode, grid_from_config(cfg),
                          cfg.bound_case, opts.pairing, strict=False)
    path = write_sweep(_out(cfg, args) / "infsup_sweep.csv", report)
    bad = report.violations()
    print(f"sweep: {len(report.rows)} rows, min ratio {min(r.ratio for r in report.rows):.4g}, "
          f"{len(bad)} violations -> {path}")
    return EXIT_NUMERICAL if bad else EXIT_OK


def render_report(rows: list[dict]) -> str:
    """Per-N table with the lower-bound and exact-constant estimators side by side."""
    by_n: dict[int, dict] = {}
    for r in rows:
        by_n.setdefault(r["N"], {})[r["bound_kind"]] = r
    head = (f"{'N':>4} {'err_rel':>10} {'err_abs':>10} | {'delta_LB':>10} {'eta_LB':>10} | "
            f"{'delta_ex':>10} {'eta_ex':>10}")
    lines = [head, "-" * len(head)]

    def cell(d, key):
        return f"{d[key]:>10.3e}" if d is not None else f"{'-':>10}"

    for n in sorted(by_n):
        kinds = by_n[n]
        lb = kinds.get("lower_bound")
        ex = kinds.get("exact")
        base = lb or ex
        lines.append(f"{n:>4} {base['err_rel']:>10.3e} {base['err_abs']:>10.3e} | "
                     f"{cell(lb, 'delta_mean')} {cell(lb, 'eta_mean')} | "
                     f"{cell(ex, 'delta_mean')} {cell(ex, 'eta_mean')}")
    return "\n".join(lines)


def cmd_report(cfg: RunConfig, args) -> int:
    path = Path(args.table) if args.table else Path(args.out or cfg.out_dir) / "error_table.csv"
    if not path.is_file():
        raise ConfigError(f"error table {path} not found")
    print(render_report(read_error_table(path)))
    return EXIT_OK


COMMANDS = {
    "mesh-info": cmd_mesh_info,
    "hf-solve": cmd_hf_solve,
    "greedy": cmd_greedy,
    "online": cmd_online,
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="certrb", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--model", help="reduced model file (default <out>/model.npz)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "hf-solve":
            p.add_argument("--mu", nargs=3, type=float)
        if name == "online":
            p.add_argument("--mu", dest="mu_list", nargs=3, type=float, action="append",
                           help="parameter triple; repeat for several")
            p.add_argument("--N", type=int, help="use the first N snapshots only")
            p.add_argument("--server", help="URL of a running certrb service")
            p.add_argument("--speedup", action="store_true", help="time one HF solve for comparison")
        if name == "report":
            p.add_argument("--table", help="error_table.csv to render")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, SchemaError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
