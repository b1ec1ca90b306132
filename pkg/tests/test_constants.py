import numpy as np
import pytest
import scipy.linalg as la

from certrb.assembly import assemble_boundary_mass, assemble_matrix
from certrb.constants import (
    ConvergenceError,
    h1_norm_matrix,
    largest_generalized_eig,
    poincare_constant,
    trace_constant,
)
from certrb.mesh import build_structured_mesh, make_fespace

# dense full-spectrum eigh on the 10x4 meshes, frozen
POINCARE_BM1_10x4 = 0.2939231081460974
POINCARE_BM2_10x4 = 0.5986312181624784
TRACE_BM2_10x4 = 0.9090840106332312


def _dense(mesh, fe, B):
    X = fe.restrict(h1_norm_matrix(mesh)).toarray()
    w = la.eigh(fe.restrict(B).toarray(), X, eigvals_only=True)
    return float(np.sqrt(w[-1]))


def test_poincare_dense_oracle_bm1():
    mesh = build_structured_mesh(10, 4, "graetz_distributed")
    fe = make_fespace(mesh)
    dense = _dense(mesh, fe, assemble_matrix("mass", mesh))
    assert dense == pytest.approx(POINCARE_BM1_10x4, abs=1e-12)
    assert poincare_constant(mesh, fe) == pytest.approx(dense, abs=1e-8)


def test_constants_dense_oracle_bm2():
    mesh = build_structured_mesh(10, 4, "graetz_boundary")
    fe = make_fespace(mesh)
    assert _dense(mesh, fe, assemble_matrix("mass", mesh)) == pytest.approx(POINCARE_BM2_10x4, abs=1e-12)
    dense = _dense(mesh, fe, assemble_boundary_mass(mesh, "gamma_c"))
    assert dense == pytest.approx(TRACE_BM2_10x4, abs=1e-12)
    assert poincare_constant(mesh, fe) == pytest.approx(POINCARE_BM2_10x4, abs=1e-8)
    assert trace_constant(mesh, fe, "gamma_c") == pytest.approx(TRACE_BM2_10x4, abs=1e-8)


@pytest.mark.parametrize("geo", ["graetz_distributed", "graetz_boundary"])
def test_poincare_range_and_rayleigh(geo):
    mesh = build_structured_mesh(6, 6, geo)
    fe = make_fespace(mesh)
    X = fe.restrict(h1_norm_matrix(mesh))
    M = fe.restrict(assemble_matrix("mass", mesh))
    lam, v = largest_generalized_eig(M, X)
    C = poincare_constant(mesh, fe)
    assert 0 < C < 1
    rq = (v @ M @ v) / (v @ X @ v)
    assert rq == pytest.approx(C**2, abs=1e-10)


def test_trace_rayleigh_and_positive():
    mesh = build_structured_mesh(6, 6, "graetz_boundary")
    fe = make_fespace(mesh)
    X = fe.restrict(h1_norm_matrix(mesh))
    B = fe.restrict(assemble_boundary_mass(mesh, "gamma_c"))
    lam, v = largest_generalized_eig(B, X)
    C = trace_constant(mesh, fe, "gamma_c")
    assert C > 0
    assert (v @ B @ v) / (v @ X @ v) == pytest.approx(C**2, abs=1e-10)


@pytest.mark.parametrize("geo", ["graetz_distributed", "graetz_boundary"])
def test_monotone_under_nested_refinement(geo):
    vals = []
    for n in (2, 4, 8):
        mesh = build_structured_mesh(n, n, geo)
        vals.append(poincare_constant(mesh, make_fespace(mesh)))
    assert vals[0] <= vals[1] + 1e-12 <= vals[2] + 2e-12


def test_trace_bit_identical():
    mesh = build_structured_mesh(8, 8, "graetz_boundary")
    fe = make_fespace(mesh)
    assert trace_constant(mesh, fe, "gamma_c") == trace_constant(mesh, fe, "gamma_c")


def test_no_free_dofs_rejected():
    import scipy.sparse as sp

    with pytest.raises(ValueError):
        largest_generalized_eig(sp.csr_matrix((0, 0)), sp.csr_matrix((0, 0)))


def test_convergence_error(monkeypatch):
    import scipy.sparse.linalg as spla

    def boom(*a, **k):
        raise spla.ArpackNoConvergence("no", np.zeros(0), np.zeros((0, 0)))

    monkeypatch.setattr(spla, "eigsh", boom)
    mesh = build_structured_mesh(4, 4, "graetz_distributed")
    with pytest.raises(ConvergenceError):
        poincare_constant(mesh, make_fespace(mesh), maxiter=3)
