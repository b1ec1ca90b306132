"""Closed-form inf-sup lower bounds and the exact discrete inf-sup constant."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constants import ConvergenceError
from .problems import OcpProblem, StabilityConstants
from .spacetime import NumericalError, TimeGrid, spacetime_affine

__all__ = [
    "BoundCase",
    "RigorViolation",
    "lower_bound",
    "beta_lb",
    "bound_from_constants",
    "allowed_cases",
    "beta_exact",
    "beta_exact_dense",
    "beta_exact_at",
    "SweepRow",
    "StabilityReport",
    "infsup_sweep",
]


class BoundCase(str, Enum):
    CONTROL_EQUALS_OBSERVATION = "control_equals_observation"
    CONTROL_BOUND = "control_bound"
    OBSERVATION_BOUND = "observation_bound"


class RigorViolation(NumericalError):
    """A lower bound exceeded the exact inf-sup constant."""


_ALLOWED = {
    # control acts everywhere, observation on two boxes
    "graetz_distributed": (BoundCase.CONTROL_BOUND,),
    "graetz_boundary": (BoundCase.CONTROL_BOUND, BoundCase.OBSERVATION_BOUND),
}


def allowed_cases(problem: OcpProblem) -> tuple[BoundCase, ...]:
    return _ALLOWED.get(problem.problem_id, tuple(BoundCase))


def lower_bound(case, gamma_a: float, alpha: float, c1: float = 0.0, c2: float = 0.0) -> float:
    """Evaluate the three closed-form cases.

    ``c1 * c2`` is the product of continuity/embedding constants entering the
    second and third cases; it is ignored for the first.
    """
    case = BoundCase(case)
    if gamma_a <= 0:
        raise ValueError(f"coercivity constant must be positive, got {gamma_a}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if case is BoundCase.CONTROL_EQUALS_OBSERVATION:
        return float(alpha * gamma_a)
    r = c1 * c2 / (alpha * gamma_a)
    return float(gamma_a / np.sqrt(2.0 * max(1.0, r * r)))


def beta_lb(problem: OcpProblem, mu, alpha: float, case=None, pairing: str = "c_m") -> float:
    """Cheap lower bound of the inf-sup constant at ``(mu, alpha)``.

    ``pairing`` picks the numerator of the observation case: ``"c_m"`` uses
    c_m(mu) * c_obs, ``"c_c"`` uses c_c(mu) * c_obs.
    """
    case = BoundCase(problem.bound_case if case is None else case)
    if case not in allowed_cases(problem):
        raise ValueError(f"bound case {case.value!r} does not match problem {problem.problem_id!r}")
    mu = problem.check_mu(mu)
    return bound_from_constants(problem.constants, mu, alpha, case, pairing)


def bound_from_constants(k: StabilityConstants, mu, alpha: float, case, pairing: str = "c_m") -> float:
    """Same as :func:`beta_lb` from stored constants, without a problem object."""
    case = BoundCase(case)
    g = k.gamma_a(mu)
    if case is BoundCase.CONTROL_BOUND:
        return float(lower_bound(case, g, alpha, k.c_c(mu), k.c_u(mu)))
    if case is BoundCase.OBSERVATION_BOUND:
        if pairing not in ("c_m", "c_c"):
            raise ValueError(f"unknown constant pairing {pairing!r}")
        c1 = k.c_m(mu) if pairing == "c_m" else k.c_c(mu)
        return float(lower_bound(case, g, alpha, c1, k.c_obs(mu)))
    return float(lower_bound(case, g, alpha))


def beta_exact_dense(B, X) -> float:
    """Smallest singular value of L^-1 B L^-T with X = L L^T."""
    B = B.toarray() if sp.issparse(B) else np.asarray(B)
    X = X.toarray() if sp.issparse(X) else np.asarray(X)
    L = la.cholesky(X, lower=True)
    W = la.solve_triangular(L, B, lower=True)
    W = la.solve_triangular(L, W.T, lower=True).T
    return float(la.svdvals(W)[-1])


def beta_exact(B, X, maxiter: int = 3000, tol: float = 1e-12, lu_X=None) -> float:
    """``sqrt(lambda_min)`` of ``B^T X^-1 B v = lambda X v``.

    Shift-invert at zero: the inverse operator ``B^-1 X B^-T`` needs one LU
    of B, applied twice per iteration. Small systems go through the dense
    oracle directly.
    """
    n = B.shape[0]
    if B.shape != X.shape or B.shape[0] != B.shape[1]:
        raise ValueError(f"shape mismatch: B {B.shape}, X {X.shape}")
    if n <= 3:
        return beta_exact_dense(B, X)
    B = sp.csc_matrix(B)
    X = sp.csc_matrix(X)
    try:
        lu_B = spla.splu(B)
    except RuntimeError as exc:
        raise NumericalError(f"inf-sup operator is singular: {exc}") from exc
    lu_X = lu_X or spla.splu(X)

    def opinv(v):
        return lu_B.solve(X @ lu_B.solve(v, trans="T"))

    A = spla.LinearOperator((n, n), matvec=lambda v: B.T @ lu_X.solve(B @ v), dtype=float)
    OPinv = spla.LinearOperator((n, n), matvec=opinv, dtype=float)
    try:
        w = spla.eigsh(A, k=1, M=X, sigma=0.0, OPinv=OPinv, which="LM", maxiter=maxiter,
                       tol=tol, v0=np.ones(n), return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"inf-sup eigen iteration did not converge in {maxiter} steps") from exc
    return float(np.sqrt(max(w[0], 0.0)))


def beta_exact_at(problem: OcpProblem, mu, alpha: float, grid: TimeGrid | None = None) -> float:
    """Exact constant of the steady (``grid=None``) or space-time system."""
    aff = spacetime_affine(problem, grid, alpha)
    mu = problem.check_mu(mu)
    return beta_exact(aff.matrix(mu), aff.norm.full_matrix())


@dataclass(frozen=True)
class SweepRow:
    mu: tuple[float, ...]
    alpha: float
    beta_lb: float
    beta_exact: float
    mode: str

    @property
    def ratio(self) -> float:
        return self.beta_exact / self.beta_lb


@dataclass
class StabilityReport:
    rows: list[SweepRow]
    meta: dict = field(default_factory=dict)

    def violations(self, tol: float = 1e-10) -> list[SweepRow]:
        return [r for r in self.rows if r.beta_lb > r.beta_exact + tol]


def infsup_sweep(problem: OcpProblem, mu1_grid, alphas, fixed=None, mode: str = "steady",
                 grid: TimeGrid | None = None, case=None, pairing: str = "c_m",
                 strict: bool = True) -> StabilityReport:
    """Lower and exact constants on ``mu1_grid x alphas``.

    ``fixed`` holds the remaining parameter components (defaults to the box
    midpoint). With ``strict`` a row whose bound exceeds the exact constant
    raises :class:`RigorViolation`.
    """
    mu1_grid = list(mu1_grid)
    alphas = list(alphas)
    if not mu1_grid or not alphas:
        raise ValueError("sweep grids must be nonempty")
    if mode not in ("steady", "unsteady"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "unsteady" and grid is None:
        raise ValueError("unsteady sweep needs a time grid")
    tail = problem.box.midpoint[1:] if fixed is None else np.asarray(fixed, dtype=float)
    tg = grid if mode == "unsteady" else None

    rows = []
    X = None
    lu_X = None
    for alpha in alphas:
        aff = spacetime_affine(problem, tg, alpha)
        if X is None:
            X = aff.norm.full_matrix()
            lu_X = spla.splu(sp.csc_matrix(X))
        for m1 in mu1_grid:
            mu = problem.check_mu(np.concatenate([[m1], tail]))
            lb = beta_lb(problem, mu, alpha, case, pairing)
            ex = beta_exact(aff.matrix(mu), X, lu_X=lu_X)
            rows.append(SweepRow(tuple(float(v) for v in mu), float(alpha), lb, ex, mode))
    report = StabilityReport(rows, {"n_free": problem.fe.n_free, "mode": mode,
                                    "case": BoundCase(case or problem.bound_case).value})
    bad = report.violations()
    if strict and bad:
        r = bad[0]
        raise RigorViolation(
            f"lower bound {r.beta_lb:.6e} exceeds exact {r.beta_exact:.6e} at mu={list(r.mu)}, alpha={r.alpha}"
        )
    return report
