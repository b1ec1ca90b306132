import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from certrb import make_problem
from certrb.problems import AffineForm, AffineTerm, default_training_set
from certrb.rb import (
    OfflineBuilder,
    delta_N,
    error_analysis,
    greedy_build,
    orthonormalize,
    recover_control,
    reduced_solve,
    residual_dual_norm,
    residual_dual_norm_direct,
)
from certrb.spacetime import (
    NormMatrix,
    TimeGrid,
    assemble_hf_system,
    cost_functional,
    solve,
    solve_hf,
    spacetime_affine,
)
from certrb.stability import beta_exact

GRID = TimeGrid(2.0, 5)


@pytest.fixture(scope="module")
def models():
    """Partial bases (residuals stay nonzero) for both benchmarks and modes."""
    out = {}
    for pid in ("graetz_distributed", "graetz_boundary"):
        p = make_problem(pid, 4, 4)
        train = p.box.sample(30, np.random.default_rng(7))
        for mode, grid in (("steady", None), ("unsteady", GRID)):
            model, hist = greedy_build(p, train, 1e-12, max_iters=4, grid=grid)
            out[pid, mode] = (p, grid, model, hist)
    return out


@pytest.fixture(scope="module")
def steady_model(bm1):
    return greedy_build(bm1, default_training_set(bm1), 1e-4, alpha=0.01)


def _gram_error(Z, norm):
    G = Z.T @ norm.apply(Z)
    return np.abs(G - np.eye(Z.shape[1])).max()


def test_orthonormalize_cases(bm1, rng):
    norm = NormMatrix(bm1.x_free, 0.5, 3)
    n = 3 * bm1.fe.n_free
    Z, kept = orthonormalize(None, rng.standard_normal((n, 10)), norm)
    assert kept == list(range(10))
    assert _gram_error(Z, norm) < 1e-10
    # vector in the span is dropped
    Z2, kept2 = orthonormalize(Z, Z @ rng.standard_normal(10), norm)
    assert kept2 == [] and np.array_equal(Z2, Z)
    # an orthogonal direction is kept
    v = rng.standard_normal(n)
    v -= Z @ (Z.T @ norm.apply(v))
    Z3, kept3 = orthonormalize(Z, v, norm)
    assert Z3.shape[1] == 11 and _gram_error(Z3, norm) < 1e-10
    Z4, kept4 = orthonormalize(Z, np.zeros(n), norm)
    assert kept4 == []


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31))
def test_orthonormalize_property(k, seed):
    p = make_problem("graetz_distributed", 1, 1)
    norm = NormMatrix(p.x_free, 0.1, 2)
    V = np.random.default_rng(seed).standard_normal((2 * p.fe.n_free, k))
    Z, kept = orthonormalize(None, V, norm)
    assert Z.shape[1] == len(kept) <= min(k, 2 * p.fe.n_free)
    assert _gram_error(Z, norm) < 1e-10


def test_model_invariants(models):
    for (pid, mode), (p, grid, model, hist) in models.items():
        assert _gram_error(model.basis, NormMatrix(p.x_free, model.dt, model.n_t)) < 1e-10
        A, F = model.system(p.box.midpoint)
        assert A.shape == (2 * model.n_columns,) * 2
        assert model.n_columns <= 2 * model.N
        assert hist.hit_cap and model.N == 4


def test_reproduction_at_samples(models):
    for (pid, mode), (p, grid, model, hist) in models.items():
        aff = spacetime_affine(p, grid, model.alpha)
        X = aff.norm.full_matrix()
        for mu in model.meta["samples"]:
            x, _ = solve(aff.matrix(mu), aff.rhs(mu))
            xr = model.reconstruct(reduced_solve(model, mu)).x
            e = x - xr
            assert np.sqrt(e @ X @ e) <= 1e-8 * np.sqrt(x @ X @ x)


def test_offline_online_residual_matches_direct(models):
    rng = np.random.default_rng(3)
    for (pid, mode), (p, grid, model, hist) in models.items():
        aff = spacetime_affine(p, grid, model.alpha)
        for mu in p.box.sample(20, rng):
            for N in (1, model.N):
                c = reduced_solve(model, mu, N)
                fast = residual_dual_norm(model, mu, c)
                slow = residual_dual_norm_direct(aff, mu, model.reconstruct(c).x)
                assert fast == pytest.approx(slow, rel=1e-8)


def test_residual_bounds_functional_values(models, rng):
    p, grid, model, _ = models["graetz_boundary", "unsteady"]
    aff = spacetime_affine(p, grid, model.alpha)
    X = aff.norm.full_matrix()
    mu = p.box.midpoint
    c = reduced_solve(model, mu, 2)
    r = aff.rhs(mu) - aff.matrix(mu) @ model.reconstruct(c).x
    dual = residual_dual_norm(model, mu, c)
    for _ in range(50):
        v = rng.standard_normal(r.size)
        assert abs(r @ v) / np.sqrt(v @ X @ v) <= dual * (1 + 1e-10)


def test_residual_zero_cases(models):
    p, grid, model, _ = models["graetz_distributed", "steady"]
    aff = spacetime_affine(p, grid, model.alpha)
    mu = p.box.midpoint
    x, _ = solve(aff.matrix(mu), aff.rhs(mu))
    assert residual_dual_norm_direct(aff, mu, x) <= 1e-8 * np.linalg.norm(aff.rhs(mu))
    # the midpoint is the first sample: the reduced solution is exact
    c = reduced_solve(model, mu)
    assert residual_dual_norm(model, mu, c) <= 1e-8 * np.linalg.norm(aff.rhs(mu))


def test_residual_homogeneous_in_load(bm1):
    """Zero coefficients: the residual is the load itself, so scaling it scales the norm."""
    z = np.zeros(bm1.mesh.n_nodes)
    base = bm1.affine_yd
    norms = []
    for s in (1.0, 2.0):
        yd = AffineForm(tuple(AffineTerm(t.key, s * t.matrix) for t in base.terms), arity="vector")
        p = dataclasses.replace(bm1, lifting=z, affine_yd=yd)
        b = OfflineBuilder(p, 0.01)
        b.add_snapshot(b.hf_solve(p.box.midpoint))
        model = b.model()
        norms.append(residual_dual_norm(model, p.box.midpoint, np.zeros(2 * model.n_columns)))
    assert norms[1] == pytest.approx(2 * norms[0], rel=1e-12)


def test_delta_exact_below_delta_lb(models):
    p, grid, model, _ = models["graetz_distributed", "unsteady"]
    aff = spacetime_affine(p, grid, model.alpha)
    mu = np.array([12.0, 0.8, 2.2])
    c = reduced_solve(model, mu, 1)
    beta = beta_exact(aff.matrix(mu), aff.norm.full_matrix())
    assert delta_N(model, mu, c, beta) <= delta_N(model, mu, c)


def test_reduced_solve_rejects_bad_N(models):
    p, grid, model, _ = models["graetz_distributed", "steady"]
    for N in (0, model.N + 1):
        with pytest.raises(ValueError):
            reduced_solve(model, p.box.midpoint, N)
    with pytest.raises(ValueError):
        reduced_solve(model, [100.0, 1.0, 2.0])


def test_reduced_cost_matches_hf(models):
    for (pid, mode), (p, grid, model, hist) in models.items():
        mu = np.array(model.meta["samples"][-1])
        snap = model.reconstruct(reduced_solve(model, mu))
        hf = cost_functional(p, mu, model.alpha, snap, model.dt)
        assert model.cost(mu, reduced_solve(model, mu)) == pytest.approx(hf, rel=1e-10)


def test_recover_control(bm1, bm2):
    n_t = 3
    for p in (bm1, bm2):
        mu = p.box.midpoint
        p_zero = np.zeros(n_t * p.fe.n_free)
        assert not recover_control(p, mu, 0.1, p_zero).any()
        v = np.random.default_rng(0).standard_normal(p_zero.size)
        u1 = recover_control(p, mu, 0.2, v)
        assert np.allclose(recover_control(p, mu, 0.1, v), 2 * u1, rtol=1e-15)
        off = np.setdiff1d(np.arange(p.fe.n_dofs), p.control_nodes)
        assert not u1[:, off].any()


@pytest.mark.parametrize("pid", ["graetz_distributed", "graetz_boundary"])
def test_three_field_consistency(pid):
    p = make_problem(pid, 4, 4)
    mu, alpha = p.box.midpoint, 0.05
    s = assemble_hf_system(p, mu, GRID, alpha)
    snap = solve_hf(s)
    f = p.fe.free_dofs
    C_full = p.affine_c.evaluate(mu).tocsr()[f]
    U = recover_control(p, mu, alpha, snap.p)
    K = s.K()
    no_control = K @ snap.y + sp.kron(sp.identity(GRID.n_t), s.C_block) @ snap.p
    three_field = K @ snap.y - GRID.dt * np.concatenate([C_full @ u for u in U])
    assert np.abs(three_field - no_control).max() <= 1e-10 * max(1.0, np.abs(no_control).max())


def test_greedy_degenerate_tolerance(bm1):
    model, hist = greedy_build(bm1, default_training_set(bm1, 27), 1e12)
    assert model.N == 1 and hist.converged and len(hist.records) == 1


def test_greedy_single_training_point(bm1):
    mu = np.array([7.0, 0.9, 1.9])
    b = OfflineBuilder(bm1, 0.01)
    b.add_snapshot(b.hf_solve(bm1.box.midpoint))
    m0 = b.model()
    initial = delta_N(m0, mu, reduced_solve(m0, mu))
    model, hist = greedy_build(bm1, [mu], 1e-300, max_iters=2)
    assert model.N == 2
    assert delta_N(model, mu, reduced_solve(model, mu)) <= 1e-8 * initial


def test_greedy_history(steady_model):
    model, hist = steady_model
    assert hist.converged and hist.final_delta <= 1e-4
    d = [r.delta_max for r in hist.records]
    assert d[0] >= 10 * d[-1]
    assert [r.N for r in hist.records] == list(range(1, model.N + 1))
    assert hist.records[0].mu == tuple(model.meta["samples"][0])


def test_greedy_argument_errors(bm1):
    with pytest.raises(ValueError):
        greedy_build(bm1, np.zeros((0, 3)), 1e-4)
    with pytest.raises(ValueError):
        greedy_build(bm1, [[10, 1, 2]], 0.0)
    with pytest.raises(ValueError):
        greedy_build(bm1, [[100, 1, 2]], 1e-4)
    with pytest.raises(ValueError):
        greedy_build(bm1, [[10, 1, 2]], 1e-4, bound_case="observation_bound")


def test_error_analysis_rigor_and_trend(bm1, steady_model):
    model, _ = steady_model
    test = bm1.box.sample(8, np.random.default_rng(11))
    rep = error_analysis(model, bm1, test, with_exact=True)
    assert np.all(rep.eta >= 1 - 1e-8)
    assert np.all(rep.eta_exact >= 1 - 1e-8)
    assert np.all(rep.delta_exact <= rep.delta)
    mean = rep.err_abs.mean(axis=0)
    assert np.all(mean[2:] <= mean[:-2])
    rows = rep.rows()
    assert len(rows) == 2 * model.N
    assert {r["bound_kind"] for r in rows} == {"lower_bound", "exact"}


def test_error_analysis_mesh_mismatch(steady_model):
    model, _ = steady_model
    other = make_problem("graetz_distributed", 5, 5)
    with pytest.raises(ValueError):
        error_analysis(model, other, [other.box.midpoint])
