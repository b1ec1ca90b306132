"""All-at-once space-time saddle systems, their affine decomposition, and norms.

Unknowns are ordered ``[y_1 .. y_Nt, p_1 .. p_Nt]`` (free dofs only, time
major). Rows are ordered adjoint equations first, state equations second, so
the monolithic matrix reads::

    [[ dt I(x)M      K^T          ]   [y]   [ dt (M y_d - lifting) ]
     [ K            -dt/alpha I(x)C]] [p] = [ S y_0 - dt lifting   ]

with ``K`` block lower bidiagonal: ``S + dt A`` on the diagonal and ``-S``
below it. The steady problem is the same system with ``dt = 1``, one step and
``S = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import finalize
from .problems import COEFFICIENTS, OcpProblem

__all__ = [
    "NumericalError",
    "TimeGrid",
    "NormMatrix",
    "SpaceTimeBlockSystem",
    "SpaceTimeAffine",
    "Snapshot",
    "assemble_hf_system",
    "assemble_steady_system",
    "solve_hf",
    "solve",
    "spacetime_norm",
    "spacetime_affine",
    "cost_functional",
]


class NumericalError(RuntimeError):
    """Singular factorization or an inaccurate solve."""


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_t: int

    def __post_init__(self):
        if self.n_t < 1:
            raise ValueError(f"N_t must be >= 1, got {self.n_t}")
        if not self.T > 0:
            raise ValueError(f"final time must be positive, got {self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.n_t


@dataclass(frozen=True, eq=False)
class NormMatrix:
    """Discrete Q-norm: ``||v||_Q^2 = sum_k dt v_k^T X v_k``."""

    X_space: sp.csr_matrix
    dt: float = 1.0
    n_t: int = 1

    @property
    def n_free(self) -> int:
        return self.X_space.shape[0]

    def matrix(self) -> sp.csr_matrix:
        """``dt * blockdiag(X, ..., X)`` as one sparse matrix."""
        return finalize(sp.kron(sp.identity(self.n_t), self.dt * self.X_space))

    def full_matrix(self) -> sp.csr_matrix:
        """Norm on the product space (state, adjoint)."""
        Q = self.matrix()
        return finalize(sp.block_diag([Q, Q]))

    def apply(self, v: np.ndarray) -> np.ndarray:
        """``X_Q v`` for a space-time vector or a matrix of column vectors."""
        v = np.asarray(v)
        shape = v.shape
        blocks = v.reshape(self.n_t, self.n_free, -1)
        out = np.stack([self.X_space @ b for b in blocks]) * self.dt
        return out.reshape(shape)


def spacetime_norm(v, norm: NormMatrix) -> float:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size != norm.n_t * norm.n_free:
        raise ValueError(
            f"vector of length {v.size} does not match {norm.n_t} steps x {norm.n_free} free dofs"
        )
    blocks = v.reshape(norm.n_t, norm.n_free)
    total = sum(float(b @ (norm.X_space @ b)) for b in blocks)
    return float(np.sqrt(max(norm.dt * total, 0.0)))


@dataclass(eq=False)
class SpaceTimeBlockSystem:
    K_diag: sp.csr_matrix
    K_sub: sp.csr_matrix | None
    M_block: sp.csr_matrix
    C_block: sp.csr_matrix
    rhs_state: np.ndarray
    rhs_adjoint: np.ndarray
    n_t: int
    alpha: float
    dt: float
    mu: np.ndarray | None = None
    steady: bool = False

    @property
    def n_free(self) -> int:
        return self.K_diag.shape[0]

    @property
    def dim(self) -> int:
        return 2 * self.n_free * self.n_t

    def K(self) -> sp.csr_matrix:
        I = sp.identity(self.n_t)
        K = sp.kron(I, self.K_diag)
        if self.K_sub is not None and self.n_t > 1:
            K = K + sp.kron(sp.eye(self.n_t, k=-1), self.K_sub)
        return finalize(K)

    def matrix(self) -> sp.csr_matrix:
        I = sp.identity(self.n_t)
        K = self.K()
        return finalize(
            sp.bmat([[sp.kron(I, self.M_block), K.T], [K, sp.kron(I, self.C_block)]])
        )

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.rhs_adjoint, self.rhs_state])


@dataclass(eq=False)
class Snapshot:
    y: np.ndarray
    p: np.ndarray
    n_t: int
    mu: np.ndarray | None = None
    residual: float = 0.0

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.y, self.p])

    def fields(self, problem: OcpProblem) -> tuple[np.ndarray, np.ndarray]:
        """Nodal ``(n_t, N_h)`` state (lifting re-added) and adjoint arrays."""
        fe = problem.fe
        Y = np.tile(problem.lifting, (self.n_t, 1))
        P = np.zeros((self.n_t, fe.n_dofs))
        Y[:, fe.free_dofs] += self.y.reshape(self.n_t, -1)
        P[:, fe.free_dofs] = self.p.reshape(self.n_t, -1)
        return Y, P


def _blocks(problem: OcpProblem, mu):
    fe = problem.fe
    f, d = fe.free_dofs, fe.dirichlet_dofs
    g = problem.lifting[d]

    def split(form):
        A = form.evaluate(mu).tocsr()
        Af = A[f]
        return Af[:, f].tocsr(), np.asarray(Af[:, d] @ g).ravel()

    A, liftA = split(problem.affine_a)
    M, liftM = split(problem.affine_m)
    C, _ = split(problem.affine_c)
    S, _ = split(problem.affine_s)
    yd = np.asarray(problem.affine_yd.evaluate(mu)).ravel()[f]
    return A, liftA, M, liftM, C, S, yd


def _check_alpha(alpha):
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")


def assemble_hf_system(problem: OcpProblem, mu, grid: TimeGrid, alpha: float) -> SpaceTimeBlockSystem:
    """Backward Euler state, forward Euler adjoint, coupled over all steps."""
    _check_alpha(alpha)
    mu = problem.check_mu(mu)
    A, liftA, M, liftM, C, S, yd = _blocks(problem, mu)
    dt, n_t = grid.dt, grid.n_t
    # y_0 has a zero homogeneous part, so S y_0 drops out of the first step
    rhs_state = np.tile(-dt * liftA, n_t)
    rhs_adjoint = np.tile(dt * (yd - liftM), n_t)
    return SpaceTimeBlockSystem(
        K_diag=finalize(S + dt * A),
        K_sub=finalize(-S),
        M_block=finalize(dt * M),
        C_block=finalize((-dt / alpha) * C),
        rhs_state=rhs_state,
        rhs_adjoint=rhs_adjoint,
        n_t=n_t,
        alpha=alpha,
        dt=dt,
        mu=mu,
    )


def assemble_steady_system(problem: OcpProblem, mu, alpha: float) -> SpaceTimeBlockSystem:
    _check_alpha(alpha)
    mu = problem.check_mu(mu)
    A, liftA, M, liftM, C, _, yd = _blocks(problem, mu)
    return SpaceTimeBlockSystem(
        K_diag=A,
        K_sub=None,
        M_block=M,
        C_block=finalize((-1.0 / alpha) * C),
        rhs_state=-liftA,
        rhs_adjoint=yd - liftM,
        n_t=1,
        alpha=alpha,
        dt=1.0,
        mu=mu,
        steady=True,
    )


def solve(B, F, mu=None, tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Sparse LU solve with one refinement step when needed."""
    try:
        lu = spla.splu(sp.csc_matrix(B))
    except RuntimeError as exc:
        raise NumericalError(f"factorization failed at mu={_fmt(mu)}: {exc}") from exc
    x = lu.solve(F)
    nF = np.linalg.norm(F)
    scale = nF if nF > 0 else 1.0
    r = F - B @ x
    rel = np.linalg.norm(r) / scale
    if rel > tol:
        x = x + lu.solve(r)
        rel = np.linalg.norm(F - B @ x) / scale
    if not np.all(np.isfinite(x)) or rel > tol:
        raise NumericalError(f"solve inaccurate at mu={_fmt(mu)}: relative residual {rel:.3e}")
    return x, float(rel)


def _fmt(mu):
    return None if mu is None else np.asarray(mu).tolist()


def solve_hf(system: SpaceTimeBlockSystem) -> Snapshot:
    B = system.matrix()
    x, rel = solve(B, system.rhs(), system.mu)
    n = system.n_free * system.n_t
    return Snapshot(x[:n], x[n:], system.n_t, system.mu, rel)


@dataclass(eq=False)
class SpaceTimeAffine:
    """``B(mu) = sum theta_l B_l`` and ``F(mu) = sum theta_l F_l`` on the product space.

    Terms sharing a coefficient key are merged, so the term count is the
    number of distinct coefficient functions rather than of assembled forms.
    """

    b_keys: list[str]
    b_mats: list[sp.csr_matrix]
    f_keys: list[str]
    f_vecs: list[np.ndarray]
    norm: NormMatrix
    alpha: float
    steady: bool
    meta: dict = field(default_factory=dict)

    @property
    def n_t(self) -> int:
        return self.norm.n_t

    @property
    def n_free(self) -> int:
        return self.norm.n_free

    @property
    def dim(self) -> int:
        return 2 * self.n_t * self.n_free

    def b_thetas(self, mu) -> np.ndarray:
        return np.array([COEFFICIENTS[k](mu) for k in self.b_keys])

    def f_thetas(self, mu) -> np.ndarray:
        return np.array([COEFFICIENTS[k](mu) for k in self.f_keys])

    def matrix(self, mu) -> sp.csr_matrix:
        th = self.b_thetas(mu)
        B = th[0] * self.b_mats[0]
        for c, Bl in zip(th[1:], self.b_mats[1:]):
            B = B + c * Bl
        return B.tocsr()

    def rhs(self, mu) -> np.ndarray:
        F = np.zeros(self.dim)
        for c, v in zip(self.f_thetas(mu), self.f_vecs):
            F += c * v
        return F


def spacetime_affine(problem: OcpProblem, grid: TimeGrid | None, alpha: float) -> SpaceTimeAffine:
    """Affine decomposition of the all-at-once system; ``grid=None`` means steady."""
    _check_alpha(alpha)
    fe = problem.fe
    f, d = fe.free_dofs, fe.dirichlet_dofs
    g = problem.lifting[d]
    steady = grid is None
    n_t = 1 if steady else grid.n_t
    dt = 1.0 if steady else grid.dt
    nT = n_t * fe.n_free
    I = sp.identity(n_t)
    Z = sp.csr_matrix((nT, nT))

    b_acc: dict[str, sp.csr_matrix] = {}
    f_acc: dict[str, np.ndarray] = {}

    def add_b(key, mat):
        b_acc[key] = b_acc[key] + mat if key in b_acc else mat

    def add_f(key, vec):
        if not np.any(vec):
            return
        f_acc[key] = f_acc[key] + vec if key in f_acc else vec

    def ff_fd(A):
        Af = A.tocsr()[f]
        return Af[:, f].tocsr(), np.asarray(Af[:, d] @ g).ravel()

    zeros = np.zeros(nT)
    for term in problem.affine_a.terms:
        A, lift = ff_fd(term.matrix)
        blk = sp.kron(I, dt * A)
        add_b(term.key, sp.bmat([[Z, blk.T], [blk, Z]]))
        add_f(term.key, np.concatenate([zeros, np.tile(-dt * lift, n_t)]))
    if not steady:
        L = I - sp.eye(n_t, k=-1)
        for term in problem.affine_s.terms:
            S, _ = ff_fd(term.matrix)
            Ks = sp.kron(L, S)
            add_b(term.key, sp.bmat([[Z, Ks.T], [Ks, Z]]))
    for term in problem.affine_m.terms:
        M, lift = ff_fd(term.matrix)
        add_b(term.key, sp.bmat([[sp.kron(I, dt * M), None], [None, Z]]))
        add_f(term.key, np.concatenate([np.tile(-dt * lift, n_t), zeros]))
    for term in problem.affine_c.terms:
        C, _ = ff_fd(term.matrix)
        add_b(term.key, sp.bmat([[Z, None], [None, sp.kron(I, (-dt / alpha) * C)]]))
    for term in problem.affine_yd.terms:
        v = np.asarray(term.matrix).ravel()[f]
        add_f(term.key, np.concatenate([np.tile(dt * v, n_t), zeros]))

    return SpaceTimeAffine(
        b_keys=list(b_acc),
        b_mats=[finalize(m) for m in b_acc.values()],
        f_keys=list(f_acc),
        f_vecs=list(f_acc.values()),
        norm=NormMatrix(problem.x_free, dt, n_t),
        alpha=alpha,
        steady=steady,
        meta={"T": None if steady else grid.T},
    )


def cost_functional(problem: OcpProblem, mu, alpha: float, snapshot: Snapshot, dt: float = 1.0) -> float:
    """Tracking plus control cost, with the control recovered as p / alpha.

    ``dt`` weights each time step (1 for the steady problem).
    """
    mu = problem.check_mu(mu)
    Y, P = snapshot.fields(problem)
    C = problem.affine_c.evaluate(mu)
    J = 0.0
    for piece in problem.desired:
        w = COEFFICIENTS[piece.weight](mu)
        c = COEFFICIENTS[piece.level](mu)
        E = Y - c
        J += 0.5 * w * dt * float(np.sum(E * (piece.mass @ E.T).T))
    J += 0.5 / alpha * dt * float(np.sum(P * (C @ P.T).T))
    return J
