"""Affine-decomposed Graetz optimal control benchmarks on the reference domain.

Every parameter-dependent coefficient is addressed by a string key into
:data:`COEFFICIENTS`, so reduced models can be saved and evaluated without
any Python closures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .assembly import assemble_boundary_mass, assemble_matrix
from .constants import h1_norm_matrix, poincare_constant, trace_constant
from .mesh import FeSpace, Mesh, build_structured_mesh, make_fespace

__all__ = [
    "COEFFICIENTS",
    "BOUND_CASES",
    "ParameterBox",
    "AffineTerm",
    "AffineForm",
    "DesiredPiece",
    "StabilityConstants",
    "OcpProblem",
    "instantiate_graetz_distributed",
    "instantiate_graetz_boundary",
    "make_problem",
    "theta_eval",
    "desired_state_load",
    "default_training_set",
    "PROBLEMS",
]

COEFFICIENTS = {
    "1": lambda mu: 1.0,
    "1/mu1": lambda mu: 1.0 / mu[0],
    "mu2": lambda mu: mu[1],
    "mu3": lambda mu: mu[2],
    "mu2*mu3": lambda mu: mu[1] * mu[2],
    "1/(mu1*mu2)": lambda mu: 1.0 / (mu[0] * mu[1]),
    "mu2/mu1": lambda mu: mu[1] / mu[0],
}

BOUND_CASES = ("control_equals_observation", "control_bound", "observation_bound")


@dataclass(frozen=True)
class ParameterBox:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper bounds differ in length")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError(f"empty parameter box {self.lower} .. {self.upper}")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    def contains(self, mu, tol: float = 1e-12) -> bool:
        mu = np.asarray(mu, dtype=float)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        scale = np.maximum(1.0, np.abs(hi))
        return mu.shape == lo.shape and bool(np.all(mu >= lo - tol * scale) and np.all(mu <= hi + tol * scale))

    def check(self, mu, extrapolate: bool = False) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (self.dim,):
            raise ValueError(f"parameter must have {self.dim} components, got shape {mu.shape}")
        if not np.all(np.isfinite(mu)):
            raise ValueError(f"non-finite parameter {mu}")
        if not extrapolate and not self.contains(mu):
            raise ValueError(f"parameter {mu.tolist()} outside box {self.lower} .. {self.upper}")
        return mu

    def tensor_grid(self, shape: Sequence[int]) -> np.ndarray:
        """Tensor grid with ``shape[i]`` equispaced levels along direction i.

        A direction with one level sits at the box midpoint. Rows are in
        lexicographic order, first direction slowest.
        """
        if len(shape) != self.dim or any(int(k) < 1 for k in shape):
            raise ValueError(f"grid shape {tuple(shape)} does not fit a {self.dim}-parameter box")
        axes = []
        for lo, hi, k in zip(self.lower, self.upper, shape):
            axes.append(np.linspace(lo, hi, int(k)) if k > 1 else np.array([0.5 * (lo + hi)]))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def staggered_grid(self, per_axis: int, active: Sequence[int]) -> np.ndarray:
        """``per_axis**2`` points: a tensor grid over two ``active`` directions.

        The third direction runs through ``per_axis`` levels by the
        Latin-square rule ``(i + j) mod per_axis``, so it is sampled as
        finely as the others without multiplying the point count.
        """
        if self.dim != 3 or len(active) != 2 or len(set(active)) != 2:
            raise ValueError("staggered grids need a 3-parameter box and two distinct active directions")
        i0, i1 = active
        (rest,) = set(range(3)) - set(active)
        axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(self.lower, self.upper)]
        i, j = np.meshgrid(np.arange(per_axis), np.arange(per_axis), indexing="ij")
        i, j = i.ravel(), j.ravel()
        pts = np.empty((i.size, 3))
        pts[:, i0] = axes[i0][i]
        pts[:, i1] = axes[i1][j]
        pts[:, rest] = axes[rest][(i + j) % per_axis]
        return pts

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return lo + (hi - lo) * rng.random((n, self.dim))



@dataclass(frozen=True, eq=False)
class AffineTerm:
    key: str
    matrix: sp.csr_matrix | np.ndarray

    def theta(self, mu) -> float:
        return float(COEFFICIENTS[self.key](mu))


@dataclass(frozen=True, eq=False)
class AffineForm:
    """Sum of ``theta_l(mu) * A_l``; ``arity`` is ``"matrix"`` or ``"vector"``."""

    terms: tuple[AffineTerm, ...]
    arity: str = "matrix"

    def __post_init__(self):
        shapes = {t.matrix.shape for t in self.terms}
        if len(shapes) > 1:
            raise ValueError(f"affine terms have mismatched shapes {shapes}")

    def __len__(self):
        return len(self.terms)

    def thetas(self, mu) -> np.ndarray:
        return np.array([t.theta(mu) for t in self.terms])

    def evaluate(self, mu):
        th = self.thetas(mu)
        out = th[0] * self.terms[0].matrix
        for c, t in zip(th[1:], self.terms[1:]):
            out = out + c * t.matrix
        return out


@dataclass(frozen=True, eq=False)
class DesiredPiece:
    """Constant desired level on one observation region.

    Contributes ``weight(mu) * int_region (y - level(mu))^2`` to the tracking
    term of the cost functional.
    """

    mass: sp.csr_matrix
    weight: str
    level: str


@dataclass(frozen=True)
class StabilityConstants:
    """Closed-form ingredients of the inf-sup lower bounds.

    ``control_scaling`` selects how the continuity constant of the control
    form depends on the geometric parameter: ``"pullback"`` multiplies the
    trace constant by the arc-length factor mu_2, ``"reference"`` uses the
    bare reference-domain trace constant.
    """

    problem_id: str
    C_omega: float
    C_gamma: float | None = None
    control_scaling: str = "pullback"

    def gamma_a(self, mu) -> float:
        mu1 = mu[0]
        if self.problem_id == "graetz_distributed":
            return 1.0 / (mu1 * (1.0 + self.C_omega**2))
        mu2 = mu[1]
        return min(1.0 / mu1, 1.0 / (mu1 * mu2), mu2 / mu1, 1.0) / (1.0 + self.C_omega**2)

    def c_c(self, mu) -> float:
        if self.problem_id == "graetz_distributed":
            return self.C_omega
        if self.control_scaling == "pullback":
            return mu[1] * self.C_gamma
        return self.C_gamma

    def c_u(self, mu) -> float:
        return self.C_omega if self.problem_id == "graetz_distributed" else self.C_gamma

    def c_m(self, mu) -> float:
        return self.C_omega if self.problem_id == "graetz_distributed" else self.C_omega * mu[1]

    def c_obs(self, mu) -> float:
        return self.C_omega

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "C_omega": self.C_omega,
            "C_gamma": self.C_gamma,
            "control_scaling": self.control_scaling,
        }


@dataclass(eq=False)
class OcpProblem:
    """A parametrized linear-quadratic OCP in no-control form.

    All matrices are global (N_h x N_h); free/Dirichlet splitting happens in
    the space-time assembly.
    """

    problem_id: str
    fe: FeSpace
    box: ParameterBox
    affine_a: AffineForm
    affine_m: AffineForm
    affine_c: AffineForm
    affine_s: AffineForm
    affine_yd: AffineForm
    desired: tuple[DesiredPiece, ...]
    lifting: np.ndarray
    bound_case: str
    constants: StabilityConstants
    x_norm: sp.csr_matrix
    control_nodes: np.ndarray
    alpha_default: float
    operator_params: tuple[int, ...] = (0,)
    extrapolate: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def mesh(self) -> Mesh:
        return self.fe.mesh

    @cached_property
    def x_free(self) -> sp.csr_matrix:
        """H1 norm matrix on free dofs."""
        return self.fe.restrict(self.x_norm)

    def check_mu(self, mu) -> np.ndarray:
        return self.box.check(mu, extrapolate=self.extrapolate)

    def forms(self) -> dict[str, AffineForm]:
        return {
            "a": self.affine_a,
            "m": self.affine_m,
            "c": self.affine_c,
            "s": self.affine_s,
            "yd": self.affine_yd,
        }


def theta_eval(form: AffineForm, mu, alpha: float | None = None, box: ParameterBox | None = None,
               extrapolate: bool = False) -> np.ndarray:
    """Coefficient list of ``form`` at ``mu``.

    ``alpha`` is validated to lie in (0, 1] when given; the coefficients
    themselves never depend on it (the 1/alpha scaling of the control block is
    applied by the space-time assembly).
    """
    if alpha is not None and not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    mu = np.asarray(mu, dtype=float)
    if box is not None:
        box.check(mu, extrapolate=extrapolate)
    th = form.thetas(mu)
    if not np.all(np.isfinite(th)):
        raise ValueError(f"non-finite affine coefficients at mu={mu.tolist()}")
    return th


def default_training_set(problem: "OcpProblem", n: int = 225) -> np.ndarray:
    """Training grid with about ``n`` points.

    Two operator-affecting directions get a square grid with the remaining
    (right-hand-side only) direction staggered through it; otherwise the
    nearest cube tensor grid is used.
    """
    ops = tuple(problem.operator_params)
    if problem.box.dim == 3 and len(ops) == 2:
        return problem.box.staggered_grid(int(round(np.sqrt(n))), ops)
    k = max(1, int(round(n ** (1.0 / problem.box.dim))))
    return problem.box.tensor_grid((k,) * problem.box.dim)


def desired_state_load(problem: OcpProblem, mu) -> np.ndarray:
    """Global nodal load m(y_d(mu), phi_i; mu)."""
    mu = problem.check_mu(mu)
    return np.asarray(problem.affine_yd.evaluate(mu)).ravel()


def _ones_load(M):
    return np.asarray(M @ np.ones(M.shape[0])).ravel()


def _require_tags(mesh: Mesh, subdomains, boundaries, problem_id):
    have_sub = set(np.unique(mesh.subdomain))
    have_bnd = set(np.unique(mesh.edge_tag))
    missing = [t for t in subdomains if t not in have_sub] + [t for t in boundaries if t not in have_bnd]
    if missing:
        raise ValueError(f"mesh lacks tags {missing} required by {problem_id}")


def instantiate_graetz_distributed(mesh: Mesh, alpha: float = 0.01, extrapolate: bool = False) -> OcpProblem:
    """Distributed control over the whole channel, observation on two boxes."""
    _require_tags(mesh, ("omega1", "omega2"), ("gamma_d1", "gamma_d2", "gamma_n"), "graetz_distributed")
    fe = make_fespace(mesh, ("gamma_d1", "gamma_d2"))
    stiff = assemble_matrix("stiffness_xx", mesh) + assemble_matrix("stiffness_yy", mesh)
    adv = assemble_matrix("advection_x", mesh)
    mass = assemble_matrix("mass", mesh)
    m1 = assemble_matrix("mass", mesh, "omega1")
    m2 = assemble_matrix("mass", mesh, "omega2")

    lifting = np.zeros(mesh.n_nodes)
    d2 = np.unique(mesh.boundary_edges("gamma_d2"))
    d1 = np.unique(mesh.boundary_edges("gamma_d1"))
    lifting[d2] = 2.0
    lifting[d1] = 1.0  # junction node at x1 = 1 takes the first value

    C_omega = poincare_constant(mesh, fe)
    return OcpProblem(
        problem_id="graetz_distributed",
        fe=fe,
        box=ParameterBox((3.0, 0.5, 1.5), (20.0, 1.5, 2.5)),
        affine_a=AffineForm((AffineTerm("1/mu1", stiff), AffineTerm("1", adv))),
        affine_m=AffineForm((AffineTerm("1", m1), AffineTerm("1", m2))),
        affine_c=AffineForm((AffineTerm("1", mass),)),
        affine_s=AffineForm((AffineTerm("1", mass),)),
        affine_yd=AffineForm(
            (AffineTerm("mu2", _ones_load(m1)), AffineTerm("mu3", _ones_load(m2))), arity="vector"
        ),
        desired=(DesiredPiece(m1, "1", "mu2"), DesiredPiece(m2, "1", "mu3")),
        lifting=lifting,
        bound_case="control_bound",
        constants=StabilityConstants("graetz_distributed", C_omega),
        x_norm=h1_norm_matrix(mesh),
        control_nodes=np.arange(mesh.n_nodes),
        alpha_default=alpha,
        operator_params=(0,),
        extrapolate=extrapolate,
    )


def instantiate_graetz_boundary(mesh: Mesh, alpha: float = 0.07, bound_case: str = "observation_bound",
                                control_scaling: str = "pullback", extrapolate: bool = False) -> OcpProblem:
    """Neumann boundary control on the stretched right block, traced back to mu_2 = 1.

    The right block [1, 1 + mu_2] x [0, 1] is the image of [1, 2] x [0, 1]
    under x1 -> 1 + mu_2 (x1 - 1); its Jacobian diag(mu_2, 1) produces the
    coefficients 1/(mu_1 mu_2) on d_x1 d_x1, mu_2/mu_1 on d_x2 d_x2, mu_2 on
    mass and boundary-mass terms, and 1 on the advection term.
    """
    if bound_case not in ("control_bound", "observation_bound"):
        raise ValueError(f"bound case {bound_case!r} does not apply to boundary control")
    if control_scaling not in ("pullback", "reference"):
        raise ValueError(f"unknown control_scaling {control_scaling!r}")
    _require_tags(mesh, ("omega1", "omega2", "omega3", "omega4"), ("gamma_d", "gamma_c", "gamma_n"), "graetz_boundary")
    fe = make_fespace(mesh, ("gamma_d",))
    right = ("omega2", "omega3", "omega4")
    obs = ("omega3", "omega4")
    m_obs = assemble_matrix("mass", mesh, obs)
    bmass = assemble_boundary_mass(mesh, "gamma_c")

    lifting = np.zeros(mesh.n_nodes)
    lifting[np.unique(mesh.boundary_edges("gamma_d"))] = 1.0

    C_omega = poincare_constant(mesh, fe)
    C_gamma = trace_constant(mesh, fe, "gamma_c")
    return OcpProblem(
        problem_id="graetz_boundary",
        fe=fe,
        box=ParameterBox((6.0, 1.0, 0.5), (20.0, 3.0, 3.0)),
        affine_a=AffineForm(
            (
                AffineTerm("1/mu1", assemble_matrix("stiffness_xx", mesh, "omega1")),
                AffineTerm("1/mu1", assemble_matrix("stiffness_yy", mesh, "omega1")),
                AffineTerm("1", assemble_matrix("advection_x", mesh, "omega1")),
                AffineTerm("1/(mu1*mu2)", assemble_matrix("stiffness_xx", mesh, right)),
                AffineTerm("mu2/mu1", assemble_matrix("stiffness_yy", mesh, right)),
                AffineTerm("1", assemble_matrix("advection_x", mesh, right)),
            )
        ),
        affine_m=AffineForm((AffineTerm("mu2", m_obs),)),
        affine_c=AffineForm((AffineTerm("mu2", bmass),)),
        affine_s=AffineForm(
            (
                AffineTerm("1", assemble_matrix("mass", mesh, "omega1")),
                AffineTerm("mu2", assemble_matrix("mass", mesh, right)),
            )
        ),
        affine_yd=AffineForm((AffineTerm("mu2*mu3", _ones_load(m_obs)),), arity="vector"),
        desired=(DesiredPiece(m_obs, "mu2", "mu3"),),
        lifting=lifting,
        bound_case=bound_case,
        constants=StabilityConstants("graetz_boundary", C_omega, C_gamma, control_scaling),
        x_norm=h1_norm_matrix(mesh),
        control_nodes=np.unique(mesh.boundary_edges("gamma_c")),
        alpha_default=alpha,
        operator_params=(0, 1),
        extrapolate=extrapolate,
    )


PROBLEMS = {
    "graetz_distributed": instantiate_graetz_distributed,
    "graetz_boundary": instantiate_graetz_boundary,
}


def make_problem(problem_id: str, nx: int, ny: int, **kwargs) -> OcpProblem:
    """Mesh the benchmark geometry and instantiate the problem on it."""
    if problem_id not in PROBLEMS:
        raise ValueError(f"unknown problem {problem_id!r}; expected one of {sorted(PROBLEMS)}")
    mesh = build_structured_mesh(nx, ny, problem_id)
    problem = PROBLEMS[problem_id](mesh, **kwargs)
    problem.meta.update(nx=nx, ny=ny)
    return problem
