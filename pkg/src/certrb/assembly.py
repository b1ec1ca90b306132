"""Vectorised P1 assembly on a :class:`~certrb.mesh.Mesh`."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh

__all__ = ["KINDS", "assemble_matrix", "assemble_boundary_mass", "velocity", "finalize"]

KINDS = ("mass", "stiffness_xx", "stiffness_yy", "advection_x")

# Strang-Fix degree-3 rule in barycentric coordinates; rational weights sum to 1.
_QP = np.array([[1 / 3, 1 / 3, 1 / 3], [0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]])
_QW = np.array([-27 / 48, 25 / 48, 25 / 48, 25 / 48])


def velocity(x2):
    """Parabolic Graetz profile along x1."""
    return x2 * (1.0 - x2)


def finalize(A) -> sp.csr_matrix:
    """CSR with sorted indices, summed duplicates and no explicit zeros."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def _geometry(mesh: Mesh, mask):
    tri = mesh.triangles[mask]
    p = mesh.nodes[tri]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    area = 0.5 * det
    # gradients of barycentric coordinates, shape (n, 3, 2)
    g = np.empty((tri.shape[0], 3, 2))
    g[:, 1, 0] = d2[:, 1] / det
    g[:, 1, 1] = -d2[:, 0] / det
    g[:, 2, 0] = -d1[:, 1] / det
    g[:, 2, 1] = d1[:, 0] / det
    g[:, 0] = -g[:, 1] - g[:, 2]
    return tri, p, area, g


def _local(kind, p, area, g):
    n = area.size
    if kind == "mass":
        base = (np.ones((3, 3)) + np.eye(3)) / 12.0
        return area[:, None, None] * base[None]
    if kind == "stiffness_xx":
        return area[:, None, None] * g[:, :, 0, None] * g[:, None, :, 0]
    if kind == "stiffness_yy":
        return area[:, None, None] * g[:, :, 1, None] * g[:, None, :, 1]
    if kind == "advection_x":
        # row i, column j: int v(x2) d_x1(phi_j) phi_i
        x2q = p[:, :, 1] @ _QP.T  # (n, nq)
        wv = velocity(x2q) * _QW[None, :]  # (n, nq)
        vphi = area[:, None] * (wv @ _QP)  # (n, 3): int v phi_i
        return vphi[:, :, None] * g[:, None, :, 0]
    raise ValueError(f"unknown assembly kind {kind!r}; expected one of {KINDS}")


def assemble_matrix(kind: str, mesh: Mesh, region="all") -> sp.csr_matrix:
    """Global N_h x N_h matrix of ``kind`` integrated over ``region``.

    ``region`` is a subdomain tag, a collection of tags, or ``"all"``.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown assembly kind {kind!r}; expected one of {KINDS}")
    mask = mesh.region_mask(region)
    tri, p, area, g = _geometry(mesh, mask)
    loc = _local(kind, p, area, g)
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    A = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(n, n))
    return finalize(A)


def assemble_boundary_mass(mesh: Mesh, boundary_tag) -> sp.csr_matrix:
    """1D P1 mass matrix over the boundary edges carrying ``boundary_tag``."""
    e = mesh.boundary_edges(boundary_tag)
    if e.shape[0] == 0:
        raise ValueError(f"boundary tag {boundary_tag!r} has no edges")
    h = np.linalg.norm(mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]], axis=1)
    base = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    loc = h[:, None, None] * base[None]
    rows = np.repeat(e, 2, axis=1).ravel()
    cols = np.tile(e, (1, 2)).ravel()
    n = mesh.n_nodes
    return finalize(sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(n, n)))
