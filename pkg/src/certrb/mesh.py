"""Structured triangular meshes for the Graetz benchmark rectangles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Geometry",
    "GEOMETRIES",
    "Mesh",
    "FeSpace",
    "build_structured_mesh",
    "make_fespace",
]

_EPS = 1e-10


@dataclass(frozen=True)
class Geometry:
    """Rectangle [0, width] x [0, height] with forced interior grid lines.

    ``x_lines`` / ``y_lines`` are the interface abscissae/ordinates that must
    coincide with mesh lines. ``subdomains`` maps a tag to a box
    ``(x0, x1, y0, y1)``; triangles whose centroid falls in none of them get
    the tag ``"rest"``. Boundary edges are classified by ``boundary_rule``.
    """

    name: str
    width: float
    height: float
    x_lines: tuple[float, ...] = ()
    y_lines: tuple[float, ...] = ()
    subdomains: dict[str, tuple[float, float, float, float]] = field(default_factory=dict)
    dirichlet_tags: tuple[str, ...] = ()

    @property
    def area(self) -> float:
        return self.width * self.height

    def boundary_tag(self, xm: float, ym: float) -> str:
        """Tag of a boundary edge from its midpoint."""
        return _BOUNDARY_RULES[self.name](self, xm, ym)


def _unit_square_rule(g, xm, ym):
    if abs(xm) < _EPS:
        return "left"
    if abs(xm - g.width) < _EPS:
        return "right"
    return "bottom" if abs(ym) < _EPS else "top"


def _distributed_rule(g, xm, ym):
    # x1 <= 1 -> first Dirichlet part, 1 < x1 < 2.5 -> second, outflow Neumann
    if abs(xm - g.width) < _EPS:
        return "gamma_n"
    if xm <= 1.0 + _EPS:
        return "gamma_d1"
    return "gamma_d2"


def _boundary_control_rule(g, xm, ym):
    if abs(xm - g.width) < _EPS:
        return "gamma_n"
    if xm <= 1.0 + _EPS:
        return "gamma_d"
    return "gamma_c"


_BOUNDARY_RULES = {
    "unit_square": _unit_square_rule,
    "graetz_distributed": _distributed_rule,
    "graetz_boundary": _boundary_control_rule,
}

GEOMETRIES: dict[str, Geometry] = {
    "unit_square": Geometry("unit_square", 1.0, 1.0),
    "graetz_distributed": Geometry(
        "graetz_distributed",
        2.5,
        1.0,
        x_lines=(0.2, 0.8, 1.0, 1.2),
        y_lines=(0.3, 0.7),
        subdomains={
            "omega1": (0.2, 0.8, 0.3, 0.7),
            "omega2": (1.2, 2.5, 0.3, 0.7),
        },
        dirichlet_tags=("gamma_d1", "gamma_d2"),
    ),
    # reference configuration mu_2 = 1
    "graetz_boundary": Geometry(
        "graetz_boundary",
        2.0,
        1.0,
        x_lines=(1.0,),
        y_lines=(0.2, 0.8),
        subdomains={
            "omega1": (0.0, 1.0, 0.0, 1.0),
            "omega2": (1.0, 2.0, 0.2, 0.8),
            "omega3": (1.0, 2.0, 0.8, 1.0),
            "omega4": (1.0, 2.0, 0.0, 0.2),
        },
        dirichlet_tags=("gamma_d",),
    ),
}


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming P1 triangulation.

    Attributes
    ----------
    nodes : (n_nodes, 2) float array
    triangles : (n_tri, 3) int array, counterclockwise
    subdomain : (n_tri,) str array
    edges : (n_edges, 2) int array of boundary edges
    edge_tag : (n_edges,) str array
    geometry : Geometry
    """

    nodes: np.ndarray
    triangles: np.ndarray
    subdomain: np.ndarray
    edges: np.ndarray
    edge_tag: np.ndarray
    geometry: Geometry
    nx: int = 0
    ny: int = 0

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def region_mask(self, region) -> np.ndarray:
        """Boolean triangle mask for a tag, an iterable of tags, or ``"all"``."""
        if region is None or region == "all":
            return np.ones(self.n_triangles, dtype=bool)
        tags = (region,) if isinstance(region, str) else tuple(region)
        known = set(np.unique(self.subdomain))
        unknown = [t for t in tags if t not in known]
        if unknown:
            raise ValueError(f"unknown region tag(s) {unknown}; mesh has {sorted(known)}")
        return np.isin(self.subdomain, tags)

    def boundary_edges(self, tags) -> np.ndarray:
        tags = (tags,) if isinstance(tags, str) else tuple(tags)
        return self.edges[np.isin(self.edge_tag, tags)]

    def signature(self) -> str:
        """Short fingerprint used to match saved models against meshes."""
        import hashlib

        h = hashlib.sha256()
        h.update(self.geometry.name.encode())
        h.update(np.ascontiguousarray(self.nodes).tobytes())
        h.update(np.ascontiguousarray(self.triangles).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class FeSpace:
    """P1 space with Dirichlet nodes removed."""

    mesh: Mesh
    dirichlet_dofs: np.ndarray
    free_dofs: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_nodes

    @property
    def n_free(self) -> int:
        return self.free_dofs.size

    def restrict(self, A):
        """Free-free block of a global sparse matrix."""
        f = self.free_dofs
        return A.tocsr()[f][:, f].tocsr()


def _axis(length: float, cells_per_unit: int, forced) -> np.ndarray:
    breaks = sorted({0.0, length, *(float(v) for v in forced)})
    pts = [0.0]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, math.ceil((b - a) * cells_per_unit - 1e-9))
        pts.extend(np.linspace(a, b, n + 1)[1:])
    return np.asarray(pts)


def build_structured_mesh(nx: int, ny: int, geometry: str | Geometry = "unit_square") -> Mesh:
    """Uniform rectangle grid, every cell split along its SW-NE diagonal.

    ``nx`` and ``ny`` are cells per unit length. Each segment between two
    consecutive forced grid lines receives ``ceil(length * n)`` equal cells,
    so subdomain interfaces are always mesh lines.
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"nx and ny must be >= 1, got nx={nx}, ny={ny}")
    geo = GEOMETRIES[geometry] if isinstance(geometry, str) else geometry
    for v in geo.x_lines:
        if not 0.0 < v < geo.width:
            raise ValueError(f"interface x={v} outside (0, {geo.width})")
    for v in geo.y_lines:
        if not 0.0 < v < geo.height:
            raise ValueError(f"interface y={v} outside (0, {geo.height})")

    xs = _axis(geo.width, nx, geo.x_lines)
    ys = _axis(geo.height, ny, geo.y_lines)
    mx, my = xs.size, ys.size
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    idx = np.arange(mx * my).reshape(my, mx)
    sw = idx[:-1, :-1].ravel()
    se = idx[:-1, 1:].ravel()
    ne = idx[1:, 1:].ravel()
    nw = idx[1:, :-1].ravel()
    tris = np.concatenate([np.column_stack([sw, se, ne]), np.column_stack([sw, ne, nw])])

    centroids = nodes[tris].mean(axis=1)
    sub = np.full(tris.shape[0], "rest", dtype=object)
    for tag, (x0, x1, y0, y1) in geo.subdomains.items():
        inside = (
            (centroids[:, 0] > x0)
            & (centroids[:, 0] < x1)
            & (centroids[:, 1] > y0)
            & (centroids[:, 1] < y1)
        )
        sub[inside] = tag

    bottom = np.column_stack([idx[0, :-1], idx[0, 1:]])
    right = np.column_stack([idx[:-1, -1], idx[1:, -1]])
    top = np.column_stack([idx[-1, 1:], idx[-1, :-1]])
    left = np.column_stack([idx[1:, 0], idx[:-1, 0]])
    edges = np.concatenate([bottom, right, top, left])
    mids = nodes[edges].mean(axis=1)
    etag = np.array([geo.boundary_tag(x, y) for x, y in mids], dtype=object)

    return Mesh(nodes, tris, sub.astype(str), edges, etag.astype(str), geo, nx, ny)


def make_fespace(mesh: Mesh, dirichlet_tags=None) -> FeSpace:
    """Every node touching a Dirichlet edge is constrained."""
    tags = mesh.geometry.dirichlet_tags if dirichlet_tags is None else tuple(dirichlet_tags)
    if tags:
        d = np.unique(mesh.boundary_edges(tags))
    else:
        d = np.array([], dtype=int)
    free = np.setdiff1d(np.arange(mesh.n_nodes), d)
    return FeSpace(mesh, d.astype(int), free.astype(int))
