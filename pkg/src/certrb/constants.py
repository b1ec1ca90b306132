"""Poincare and trace constants from generalized eigenproblems on free dofs."""

from __future__ import annotations

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import assemble_boundary_mass, assemble_matrix
from .mesh import FeSpace, Mesh

__all__ = [
    "ConvergenceError",
    "h1_norm_matrix",
    "largest_generalized_eig",
    "poincare_constant",
    "trace_constant",
    "compute_poincare_constant",
    "compute_trace_constant",
]

DENSE_LIMIT = 500


class ConvergenceError(RuntimeError):
    """An iterative eigen solve did not converge."""


def h1_norm_matrix(mesh: Mesh) -> sp.csr_matrix:
    return (
        assemble_matrix("stiffness_xx", mesh)
        + assemble_matrix("stiffness_yy", mesh)
        + assemble_matrix("mass", mesh)
    ).tocsr()


def largest_generalized_eig(M, X, maxiter: int = 5000, dense: bool | None = None):
    """Largest eigenpair of ``M v = lam X v`` with X SPD and M PSD.

    ARPACK runs in regular generalized mode with a sparse LU of X; the
    wanted eigenvalue is the top of a spectrum contained in [0, 1], so no
    shift is needed. Tiny systems fall back to a dense solve.
    """
    n = M.shape[0]
    if n == 0:
        raise ValueError("no free degrees of freedom")
    if dense is None:
        dense = n <= 2
    if dense:
        w, V = la.eigh(np.asarray(M.todense()), np.asarray(X.todense()))
        return float(w[-1]), V[:, -1]
    lu = spla.splu(sp.csc_matrix(X))
    Minv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    try:
        # fixed start vector: repeated calls are bit-identical
        w, V = spla.eigsh(M, k=1, M=X, Minv=Minv, which="LA", maxiter=maxiter, tol=1e-14, v0=np.ones(n))
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"eigen iteration did not converge within {maxiter} iterations") from exc
    return float(w[0]), V[:, 0]


def _constant(fe: FeSpace, B_full, maxiter: int) -> float:
    X = fe.restrict(h1_norm_matrix(fe.mesh))
    B = fe.restrict(B_full)
    lam, _ = largest_generalized_eig(B, X, maxiter=maxiter)
    return float(np.sqrt(max(lam, 0.0)))


def poincare_constant(mesh: Mesh, fe: FeSpace, maxiter: int = 5000) -> float:
    """Smallest C with ||v||_L2 <= C ||v||_H1 on the free space."""
    return _constant(fe, assemble_matrix("mass", mesh), maxiter)


def trace_constant(mesh: Mesh, fe: FeSpace, boundary_tag, maxiter: int = 5000) -> float:
    """Smallest C with ||v||_L2(boundary) <= C ||v||_H1 on the free space."""
    return _constant(fe, assemble_boundary_mass(mesh, boundary_tag), maxiter)


compute_poincare_constant = poincare_constant
compute_trace_constant = trace_constant
