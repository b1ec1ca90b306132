import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from certrb import make_problem
from certrb.spacetime import TimeGrid, spacetime_affine
from certrb.stability import (
    BoundCase,
    allowed_cases,
    beta_exact,
    beta_exact_at,
    beta_exact_dense,
    beta_lb,
    infsup_sweep,
    lower_bound,
)

# dense Cholesky + SVD oracle, 8x8 mesh, 396 dofs, frozen
BETA_EXACT_BM1_STEADY = 0.006691433068703455
ALPHAS = [1.0, 0.1, 0.01, 0.001]
_BM1_TINY = make_problem("graetz_distributed", 1, 1)


def test_lower_bound_cases():
    assert lower_bound("control_equals_observation", 0.3, 1.0) == pytest.approx(0.3)
    assert lower_bound("control_equals_observation", 0.3, 0.5) == pytest.approx(0.15)
    # max clamps to one
    assert lower_bound("control_bound", 0.3, 1.0, 0.1, 0.1) == pytest.approx(0.3 / np.sqrt(2))
    r = 2.0 / (0.1 * 0.4)
    assert lower_bound("observation_bound", 0.4, 0.1, 1.0, 2.0) == pytest.approx(0.4 / (np.sqrt(2) * r))
    with pytest.raises(ValueError):
        lower_bound("control_bound", -1.0, 0.1)
    with pytest.raises(ValueError):
        lower_bound("somewhere", 1.0, 0.1)


def test_bm1_example(bm1):
    C = bm1.constants.C_omega
    g = 1 / (10 * (1 + C**2))
    assert C**2 / (0.01 * g) > 1
    expected = g / np.sqrt(2) * (0.01 * g / C**2)
    assert beta_lb(bm1, [10, 1, 2], 0.01) == pytest.approx(expected, rel=1e-14)


def test_case_problem_mismatch(bm1, bm2):
    with pytest.raises(ValueError):
        beta_lb(bm1, [10, 1, 2], 0.01, "observation_bound")
    assert BoundCase.OBSERVATION_BOUND in allowed_cases(bm2)
    with pytest.raises(ValueError):
        beta_lb(bm2, [10, 1, 2], 0.07, "observation_bound", pairing="c_x")


def test_pairings(bm2):
    mu = [10.0, 2.0, 1.0]
    k = bm2.constants
    g = k.gamma_a(mu)
    for pairing, c1 in (("c_m", k.c_m(mu)), ("c_c", k.c_c(mu))):
        expect = lower_bound("observation_bound", g, 0.07, c1, k.c_obs(mu))
        assert beta_lb(bm2, mu, 0.07, "observation_bound", pairing) == expect


@settings(max_examples=30, deadline=None)
@given(st.floats(3.0, 20.0), st.floats(1e-3, 1.0), st.floats(1e-3, 1.0))
def test_lb_nondecreasing_in_alpha(mu1, a1, a2):
    p = _BM1_TINY
    lo, hi = sorted((a1, a2))
    mu = [mu1, 1.0, 2.0]
    assert beta_lb(p, mu, lo) <= beta_lb(p, mu, hi) * (1 + 1e-14)


def test_beta_exact_trivial():
    rng = np.random.default_rng(0)
    G = rng.standard_normal((30, 30))
    X = sp.csr_matrix(G @ G.T + 30 * np.eye(30))
    assert beta_exact(X, X) == pytest.approx(1.0, rel=1e-10)
    B = sp.csr_matrix(rng.standard_normal((30, 30)))
    b = beta_exact(B, X)
    assert beta_exact(2 * B, X) == pytest.approx(2 * b, rel=1e-10)
    assert b == pytest.approx(beta_exact_dense(B, X), rel=1e-8)
    with pytest.raises(ValueError):
        beta_exact(B[:10], X)


def test_beta_exact_dense_oracle(bm1):
    aff = spacetime_affine(bm1, None, 0.01)
    mu = np.array([10.0, 1.0, 2.0])
    B, X = aff.matrix(mu), aff.norm.full_matrix()
    assert B.shape[0] <= 400
    dense = beta_exact_dense(B, X)
    assert dense == pytest.approx(BETA_EXACT_BM1_STEADY, rel=1e-12)
    assert beta_exact(B, X) == pytest.approx(dense, rel=1e-6)
    assert beta_exact_at(bm1, mu, 0.01) == pytest.approx(dense, rel=1e-6)


def test_beta_exact_unsteady_dense_oracle(bm2):
    p = make_problem("graetz_boundary", 2, 2)
    grid = TimeGrid(1.0, 4)
    aff = spacetime_affine(p, grid, 0.07)
    mu = p.box.midpoint
    B, X = aff.matrix(mu), aff.norm.full_matrix()
    assert B.shape[0] <= 400
    assert beta_exact(B, X) == pytest.approx(beta_exact_dense(B, X), rel=1e-6)


@pytest.mark.parametrize("pid", ["graetz_distributed", "graetz_boundary"])
def test_rigor_many_points(pid):
    p = make_problem(pid, 3, 3)
    mu1 = np.linspace(p.box.lower[0], p.box.upper[0], 8)
    rows = []
    for fixed in (p.box.lower[1:], p.box.upper[1:], p.box.midpoint[1:]):
        rows += infsup_sweep(p, mu1, ALPHAS, fixed).rows
    rows += infsup_sweep(p, mu1[::2], ALPHAS, None, "unsteady", TimeGrid(2.0, 3)).rows
    assert len(rows) >= 100
    assert all(r.beta_lb <= r.beta_exact + 1e-10 for r in rows)
    assert all(r.ratio >= 1 for r in rows)


def test_sweep_tightness_degrades_with_alpha(bm1):
    rep = infsup_sweep(bm1, [3.0, 10.0, 20.0], ALPHAS)
    by_mu = {}
    for r in rep.rows:
        by_mu.setdefault(r.mu[0], {})[r.alpha] = r.ratio
    for ratios in by_mu.values():
        assert ratios[0.001] >= ratios[1.0]
    assert rep.meta["mode"] == "steady"
    single = infsup_sweep(bm1, [5.0], [0.5])
    assert len(single.rows) == 1


def test_bm2_ratio_grows_with_mu2(bm2):
    for alpha in (1.0, 0.07):
        r1 = infsup_sweep(bm2, [10.0], [alpha], [1.0, 1.5]).rows[0]
        r2 = infsup_sweep(bm2, [10.0], [alpha], [2.0, 1.5]).rows[0]
        assert r2.ratio > r1.ratio


def test_observation_beats_control_bound(bm2, rng):
    for mu in bm2.box.sample(20, rng):
        assert beta_lb(bm2, mu, 0.07, "observation_bound") >= beta_lb(bm2, mu, 0.07, "control_bound")


def test_sweep_argument_errors(bm1):
    with pytest.raises(ValueError):
        infsup_sweep(bm1, [], ALPHAS)
    with pytest.raises(ValueError):
        infsup_sweep(bm1, [5.0], [0.1], mode="unsteady")
    with pytest.raises(ValueError):
        infsup_sweep(bm1, [5.0], [0.1], mode="weekly")
