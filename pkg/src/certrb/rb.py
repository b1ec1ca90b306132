"""Certified reduced basis: aggregated spaces, greedy sampling, online solves.

The reduced space is one basis ``Z`` spanning state and adjoint snapshots;
both fields are expanded in it, so a model built from ``N`` snapshots solves
a ``4N`` dense system online.

Residual dual norms use a triangular factor instead of a Gram matrix. All
affine residual pieces (right-hand side terms, and every operator term
applied to every basis column) are mapped to their Riesz representers and
orthonormalized in the norm of the product space, giving ``R = Q T``. For a
coefficient vector ``w`` the dual norm is then ``||T w||_2``. This avoids the
square-root-of-epsilon floor of the Gram form and keeps nested truncations
exact, because ``T`` is upper triangular.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla

from .problems import COEFFICIENTS, OcpProblem, ParameterBox, StabilityConstants
from .spacetime import (
    NormMatrix,
    NumericalError,
    Snapshot,
    SpaceTimeAffine,
    TimeGrid,
    solve,
    spacetime_affine,
)
from .stability import BoundCase, allowed_cases, beta_exact, bound_from_constants

__all__ = [
    "StagnationError",
    "ReducedModel",
    "GreedyRecord",
    "GreedyHistory",
    "ErrorReport",
    "orthonormalize",
    "reduced_solve",
    "residual_dual_norm",
    "residual_dual_norm_direct",
    "delta_N",
    "recover_control",
    "greedy_build",
    "error_analysis",
    "OfflineBuilder",
]

DROP_TOL = 1e-10


class StagnationError(NumericalError):
    """The greedy could not enlarge the basis."""


def orthonormalize(Z: np.ndarray | None, V: np.ndarray, norm: NormMatrix, drop_tol: float = DROP_TOL):
    """Append the columns of ``V`` to the X_Q-orthonormal ``Z``.

    Classical Gram-Schmidt is applied twice per vector. A vector whose
    projected norm falls below ``drop_tol`` times its original norm is
    discarded. Returns the extended basis and the indices of kept columns.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float).T).T
    n = V.shape[0]
    Z = np.zeros((n, 0)) if Z is None else np.asarray(Z, dtype=float)
    if Z.shape[0] != n:
        raise ValueError(f"basis has {Z.shape[0]} rows, new vectors have {n}")
    cols = [Z[:, j] for j in range(Z.shape[1])]
    XZ = norm.apply(Z) if Z.shape[1] else np.zeros((n, 0))
    xz_cols = [XZ[:, j] for j in range(XZ.shape[1])]
    kept = []
    for j in range(V.shape[1]):
        v = V[:, j].copy()
        n0 = np.sqrt(max(v @ norm.apply(v), 0.0))
        if n0 == 0.0:
            continue
        for _ in range(2):
            if cols:
                B = np.column_stack(xz_cols)
                v -= np.column_stack(cols) @ (B.T @ v)
        xv = norm.apply(v)
        nv = np.sqrt(max(v @ xv, 0.0))
        if nv < drop_tol * n0:
            continue
        cols.append(v / nv)
        xz_cols.append(xv / nv)
        kept.append(j)
    Znew = np.column_stack(cols) if cols else np.zeros((n, 0))
    return Znew, kept


@dataclass(eq=False)
class ReducedModel:
    """Everything the online stage needs; independent of the mesh size.

    ``Bn`` has shape ``(Q_B, 2C, 2C)`` and ``Fn`` ``(Q_F, 2C)`` where ``C``
    is the number of basis columns; reduced unknowns are ordered
    ``[state coefficients, adjoint coefficients]``. ``sizes[N-1]`` is the
    column count after the N-th snapshot.
    """

    problem_id: str
    mode: str
    alpha: float
    n_t: int
    dt: float
    T: float | None
    bound_case: str
    pairing: str
    constants: StabilityConstants
    box: ParameterBox
    basis: np.ndarray
    sizes: list[int]
    b_keys: list[str]
    f_keys: list[str]
    Bn: np.ndarray
    Fn: np.ndarray
    R: np.ndarray
    cost_data: dict
    mesh_signature: str = ""
    meta: dict = field(default_factory=dict)
    extrapolate: bool = False

    @property
    def N(self) -> int:
        return len(self.sizes)

    @property
    def n_columns(self) -> int:
        return self.basis.shape[1]

    def columns(self, N: int | None = None) -> int:
        if self.N == 0:
            raise ValueError("reduced model has an empty basis")
        N = self.N if N is None else N
        if not 1 <= N <= self.N:
            raise ValueError(f"basis size N must lie in 1..{self.N}, got {N}")
        return self.sizes[N - 1]

    def _index(self, c: int) -> np.ndarray:
        C = self.n_columns
        return np.r_[0:c, C:C + c]

    def check_mu(self, mu) -> np.ndarray:
        return self.box.check(mu, extrapolate=self.extrapolate)

    def b_thetas(self, mu) -> np.ndarray:
        return np.array([COEFFICIENTS[k](mu) for k in self.b_keys])

    def f_thetas(self, mu) -> np.ndarray:
        return np.array([COEFFICIENTS[k](mu) for k in self.f_keys])

    def system(self, mu, N: int | None = None):
        c = self.columns(N)
        idx = self._index(c)
        A = np.tensordot(self.b_thetas(mu), self.Bn[:, idx][:, :, idx], axes=1)
        F = self.f_thetas(mu) @ self.Fn[:, idx]
        return A, F

    def beta_lb(self, mu) -> float:
        return bound_from_constants(self.constants, mu, self.alpha, self.bound_case, self.pairing)

    def reconstruct(self, coeffs) -> Snapshot:
        coeffs = np.asarray(coeffs, dtype=float)
        c = coeffs.size // 2
        Z = self.basis[:, :c]
        return Snapshot(Z @ coeffs[:c], Z @ coeffs[c:], self.n_t)

    def residual_weights(self, mu, coeffs) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        c = coeffs.size // 2
        tb = self.b_thetas(mu)
        a, b = coeffs[:c], coeffs[c:]
        per_col = np.concatenate([-np.outer(a, tb), -np.outer(b, tb)], axis=1).ravel()
        return np.concatenate([self.f_thetas(mu), per_col])

    def cost(self, mu, coeffs) -> float:
        """Cost functional of the reduced solution, with control p / alpha."""
        coeffs = np.asarray(coeffs, dtype=float)
        c = coeffs.size // 2
        a, b = coeffs[:c], coeffs[c:]
        d = self.cost_data
        J = 0.0
        for r, (wkey, lkey) in enumerate(d["pieces"]):
            w = COEFFICIENTS[wkey](mu)
            lev = COEFFICIENTS[lkey](mu)
            H = d["H"][r][:c, :c]
            hg = d["hg"][r][:c]
            h1 = d["h1"][r][:c]
            g_mg, g_m1, o_m1 = d["scal"][r]
            quad = a @ H @ a + 2.0 * a @ hg - 2.0 * lev * (a @ h1)
            quad += self.n_t * (g_mg - 2.0 * lev * g_m1 + lev * lev * o_m1)
            J += 0.5 * w * self.dt * quad
        for key, Hc in zip(d["c_keys"], d["Hc"]):
            J += 0.5 / self.alpha * self.dt * COEFFICIENTS[key](mu) * (b @ Hc[:c, :c] @ b)
        return float(J)


def reduced_solve(model: ReducedModel, mu, N: int | None = None) -> np.ndarray:
    """Dense Galerkin solve; returns ``[state coeffs, adjoint coeffs]``."""
    mu = model.check_mu(mu)
    A, F = model.system(mu, N)
    try:
        x = la.solve(A, F, check_finite=True)
    except la.LinAlgError as exc:
        raise NumericalError(f"singular reduced system at mu={mu.tolist()}, N={N}") from exc
    # normwise backward error of the dense solve
    scale = np.linalg.norm(A) * np.linalg.norm(x) + np.linalg.norm(F)
    rel = np.linalg.norm(A @ x - F) / max(scale, np.finfo(float).tiny)
    if not np.all(np.isfinite(x)) or rel > 1e-12:
        raise NumericalError(f"reduced solve inaccurate at mu={mu.tolist()}: residual {rel:.3e}")
    return x


def residual_dual_norm(model: ReducedModel, mu, coeffs) -> float:
    """Dual norm of the residual of ``coeffs`` from the stored triangular factor."""
    w = model.residual_weights(mu, coeffs)
    k = w.size
    return float(np.linalg.norm(model.R[:k, :k] @ w))


def residual_dual_norm_direct(aff: SpaceTimeAffine, mu, x: np.ndarray, lu_X=None) -> float:
    """Full-order oracle: ``sqrt(r^T X^-1 r)`` with ``r = F - B x``."""
    r = aff.rhs(mu) - aff.matrix(mu) @ x
    if not np.any(r):
        return 0.0
    rr = _riesz(aff.norm, r, lu_X)
    return float(np.sqrt(max(r @ rr, 0.0)))


def _riesz(norm: NormMatrix, v: np.ndarray, lu=None) -> np.ndarray:
    """Solve with the block-diagonal product-space norm matrix."""
    lu = lu or spla.splu(norm.X_space.tocsc())
    V = np.asarray(v).reshape(-1, norm.n_free)
    return (lu.solve(V.T).T / norm.dt).ravel()


def delta_N(model: ReducedModel, mu, coeffs, beta: float | None = None) -> float:
    """Error bound ``||r|| / beta``; ``beta`` defaults to the model's lower bound."""
    beta = model.beta_lb(mu) if beta is None else beta
    return residual_dual_norm(model, mu, coeffs) / beta


def recover_control(problem: OcpProblem, mu, alpha: float, p: np.ndarray) -> np.ndarray:
    """Nodal control ``p / alpha`` on the control support, zero elsewhere.

    ``p`` is a free-dof space-time vector; the result has shape
    ``(n_t, N_h)``.
    """
    problem.check_mu(mu)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    fe = problem.fe
    P = np.asarray(p, dtype=float).reshape(-1, fe.n_free)
    U = np.zeros((P.shape[0], fe.n_dofs))
    U[:, fe.free_dofs] = P / alpha
    mask = np.zeros(fe.n_dofs, dtype=bool)
    mask[problem.control_nodes] = True
    U[:, ~mask] = 0.0
    return U


class OfflineBuilder:
    """Mutable offline state: basis, Riesz factor and projected blocks."""

    def __init__(self, problem: OcpProblem, alpha: float, grid: TimeGrid | None = None,
                 bound_case=None, pairing: str = "c_m", drop_tol: float = DROP_TOL):
        case = BoundCase(problem.bound_case if bound_case is None else bound_case)
        if case not in allowed_cases(problem):
            raise ValueError(f"bound case {case.value!r} does not match problem {problem.problem_id!r}")
        self.problem = problem
        self.alpha = alpha
        self.grid = grid
        self.case = case
        self.pairing = pairing
        self.drop_tol = drop_tol
        self.aff = spacetime_affine(problem, grid, alpha)
        self.norm = self.aff.norm
        self.lu_X = spla.splu(self.norm.X_space.tocsc())
        self.X_full = self.norm.full_matrix()
        self.Z = np.zeros((self.n_half, 0))
        self.sizes: list[int] = []
        self.samples: list[np.ndarray] = []
        self._Q = np.zeros((0, 2 * self.n_half))
        self._k = 0
        self._T = np.zeros((0, 0))
        for v in self.aff.f_vecs:
            self._push_riesz(v)

    @property
    def n_half(self) -> int:
        return self.norm.n_t * self.norm.n_free

    def _push_riesz(self, v: np.ndarray):
        """Orthonormalize the Riesz representer of ``v`` and grow the factor."""
        r = _riesz(self.norm, v, self.lu_X)
        scale = np.sqrt(max(r @ v, 0.0))
        k = self._k
        h = np.zeros(k)
        if k:
            Q = self._Q[:k]
            for _ in range(2):
                c = Q @ (self.X_full @ r)
                r = r - Q.T @ c
                h += c
        rho = np.sqrt(max(r @ (self.X_full @ r), 0.0))
        T = np.zeros((k + 1, k + 1))
        T[:k, :k] = self._T
        T[:k, k] = h
        if k == self._Q.shape[0]:
            grown = np.zeros((max(16, 2 * k), r.size))
            grown[:k] = self._Q[:k]
            self._Q = grown
        # a dependent representer keeps a zero row so indices stay aligned
        if rho > 1e-14 * scale and rho > 0.0:
            T[k, k] = rho
            self._Q[k] = r / rho
        self._k = k + 1
        self._T = T

    def _push_column(self, z: np.ndarray):
        zero = np.zeros_like(z)
        for half in (np.concatenate([z, zero]), np.concatenate([zero, z])):
            for B in self.aff.b_mats:
                self._push_riesz(B @ half)

    def add_snapshot(self, snap: Snapshot) -> int:
        """Add the state and adjoint of ``snap``; returns the number of new columns."""
        Znew, kept = orthonormalize(self.Z, np.column_stack([snap.y, snap.p]), self.norm, self.drop_tol)
        added = Znew.shape[1] - self.Z.shape[1]
        for j in range(self.Z.shape[1], Znew.shape[1]):
            self._push_column(Znew[:, j])
        self.Z = Znew
        if added:
            self.sizes.append(Znew.shape[1])
            self.samples.append(np.asarray(snap.mu, dtype=float))
        return added

    def _project(self):
        Z = self.Z
        C = Z.shape[1]
        n = self.n_half
        Bn = np.empty((len(self.aff.b_mats), 2 * C, 2 * C))
        for l, B in enumerate(self.aff.b_mats):
            BZ_y = B[:, :n] @ Z
            BZ_p = B[:, n:] @ Z
            BZ = np.hstack([BZ_y, BZ_p])
            Bn[l, :C] = Z.T @ BZ[:n]
            Bn[l, C:] = Z.T @ BZ[n:]
        Fn = np.array([np.concatenate([Z.T @ f[:n], Z.T @ f[n:]]) for f in self.aff.f_vecs])
        return Bn, Fn

    def _cost_data(self):
        pr = self.problem
        fe = pr.fe
        f = fe.free_dofs
        g = pr.lifting
        n_t = self.norm.n_t
        Z = self.Z
        one = np.ones(fe.n_dofs)
        d = {"pieces": [], "H": [], "hg": [], "h1": [], "scal": [], "c_keys": [], "Hc": []}
        for piece in pr.desired:
            M = piece.mass.tocsr()
            Mff = M[f][:, f]
            mg = np.asarray(M @ g).ravel()[f]
            m1 = np.asarray(M @ one).ravel()[f]
            d["pieces"].append((piece.weight, piece.level))
            d["H"].append(Z.T @ _kron_apply(Mff, Z, n_t))
            d["hg"].append(Z.T @ np.tile(mg, n_t))
            d["h1"].append(Z.T @ np.tile(m1, n_t))
            d["scal"].append((float(g @ (M @ g)), float(one @ (M @ g)), float(one @ (M @ one))))
        for term in pr.affine_c.terms:
            Cff = term.matrix.tocsr()[f][:, f]
            d["c_keys"].append(term.key)
            d["Hc"].append(Z.T @ _kron_apply(Cff, Z, n_t))
        return d

    def model(self) -> ReducedModel:
        Bn, Fn = self._project()
        grid = self.grid
        return ReducedModel(
            problem_id=self.problem.problem_id,
            mode="steady" if grid is None else "unsteady",
            alpha=self.alpha,
            n_t=self.norm.n_t,
            dt=self.norm.dt,
            T=None if grid is None else grid.T,
            bound_case=self.case.value,
            pairing=self.pairing,
            constants=self.problem.constants,
            box=self.problem.box,
            basis=self.Z.copy(),
            sizes=list(self.sizes),
            b_keys=list(self.aff.b_keys),
            f_keys=list(self.aff.f_keys),
            Bn=Bn,
            Fn=Fn,
            R=self._T.copy(),
            cost_data=self._cost_data(),
            mesh_signature=self.problem.mesh.signature(),
            meta={
                "nx": self.problem.meta.get("nx"),
                "ny": self.problem.meta.get("ny"),
                "n_free": self.problem.fe.n_free,
                "samples": [s.tolist() for s in self.samples],
            },
            extrapolate=self.problem.extrapolate,
        )

    def hf_solve(self, mu) -> Snapshot:
        mu = self.problem.check_mu(mu)
        x, rel = solve(self.aff.matrix(mu), self.aff.rhs(mu), mu)
        n = self.n_half
        return Snapshot(x[:n], x[n:], self.norm.n_t, mu, rel)


def _kron_apply(A, Z, n_t):
    """``(I_{n_t} (x) A) Z`` for a column block ``Z``."""
    nf = A.shape[0]
    out = np.empty_like(Z)
    for k in range(n_t):
        out[k * nf:(k + 1) * nf] = A @ Z[k * nf:(k + 1) * nf]
    return out


@dataclass(frozen=True)
class GreedyRecord:
    iteration: int
    N: int
    mu: tuple[float, ...]
    delta_max: float


@dataclass
class GreedyHistory:
    records: list[GreedyRecord] = field(default_factory=list)
    converged: bool = False
    stagnated: bool = False
    hit_cap: bool = False
    wall_time: float = 0.0

    @property
    def final_delta(self) -> float:
        return self.records[-1].delta_max if self.records else float("inf")


def greedy_build(problem: OcpProblem, training_set, tol: float, max_iters: int = 25,
                 bound_case=None, alpha: float | None = None, grid: TimeGrid | None = None,
                 pairing: str = "c_m", mu0=None, drop_tol: float = DROP_TOL,
                 log=None) -> tuple[ReducedModel, GreedyHistory]:
    """Greedy enrichment driven by the lower-bound error estimator.

    Starts from ``mu0`` (box midpoint by default). Each iteration adds the
    state and adjoint snapshot of the current parameter, then scans the
    training set; the next parameter is the first maximizer of the
    estimator. Stops once the maximum is at most ``tol``, after
    ``max_iters`` snapshots, or when a snapshot adds no new direction.
    """
    train = np.atleast_2d(np.asarray(training_set, dtype=float))
    if train.shape[0] == 0:
        raise ValueError("training set is empty")
    if not tol > 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    alpha = problem.alpha_default if alpha is None else alpha
    for mu in train:
        problem.check_mu(mu)
    t0 = time.perf_counter()
    builder = OfflineBuilder(problem, alpha, grid, bound_case, pairing, drop_tol)
    history = GreedyHistory()
    mu = problem.box.midpoint if mu0 is None else problem.check_mu(mu0)
    model = None
    for it in range(1, max_iters + 1):
        snap = builder.hf_solve(mu)
        if builder.add_snapshot(snap) == 0:
            history.stagnated = True
            break
        model = builder.model()
        deltas = np.array([delta_N(model, m, reduced_solve(model, m)) for m in train])
        j = int(np.argmax(deltas))
        history.records.append(GreedyRecord(it, model.N, tuple(float(v) for v in mu), float(deltas[j])))
        if log:
            log(f"iteration {it}: N={model.N} max delta={deltas[j]:.3e}")
        if deltas[j] <= tol:
            history.converged = True
            break
        mu = train[j]
    else:
        history.hit_cap = True
    history.wall_time = time.perf_counter() - t0
    if model is None:
        raise StagnationError("the initial snapshot is zero; nothing to build a basis from")
    return model, history


@dataclass
class ErrorReport:
    """Per-sample errors and estimators; ``[sample, N-1]`` arrays."""

    Ns: list[int]
    err_abs: np.ndarray
    err_rel: np.ndarray
    delta: np.ndarray
    delta_exact: np.ndarray | None
    hf_norm: np.ndarray
    mus: np.ndarray
    bound_case: str

    @property
    def eta(self) -> np.ndarray:
        return self.delta / self.err_abs

    @property
    def eta_exact(self) -> np.ndarray | None:
        return None if self.delta_exact is None else self.delta_exact / self.err_abs

    def rows(self) -> list[dict]:
        """Averages per N for the lower bound and, when present, the exact constant."""
        out = []
        kinds = [("lower_bound", self.delta, self.eta)]
        if self.delta_exact is not None:
            kinds.append(("exact", self.delta_exact, self.eta_exact))
        for kind, dl, et in kinds:
            for i, N in enumerate(self.Ns):
                out.append({
                    "N": N,
                    "err_rel": float(np.mean(self.err_rel[:, i])),
                    "err_abs": float(np.mean(self.err_abs[:, i])),
                    "delta_mean": float(np.mean(dl[:, i])),
                    "eta_mean": float(np.mean(et[:, i])),
                    "bound_kind": kind,
                })
        return out


def error_analysis(model: ReducedModel, problem: OcpProblem, test_set, with_exact: bool = False,
                   Ns=None) -> ErrorReport:
    """Compare reduced and high-fidelity solutions over ``test_set``."""
    test = np.atleast_2d(np.asarray(test_set, dtype=float))
    if test.shape[0] == 0:
        raise ValueError("test set is empty")
    if problem.mesh.signature() != model.mesh_signature:
        raise ValueError("reduced model was built on a different mesh")
    grid = None if model.mode == "steady" else TimeGrid(model.T, model.n_t)
    aff = spacetime_affine(problem, grid, model.alpha)
    X = aff.norm.full_matrix()
    lu_full = spla.splu(X.tocsc()) if with_exact else None
    Ns = list(range(1, model.N + 1)) if Ns is None else list(Ns)
    S, K = test.shape[0], len(Ns)
    err = np.zeros((S, K))
    delta = np.zeros((S, K))
    dex = np.zeros((S, K)) if with_exact else None
    hf_norm = np.zeros(S)
    for s, mu in enumerate(test):
        mu = problem.check_mu(mu)
        B, F = aff.matrix(mu), aff.rhs(mu)
        x, _ = solve(B, F, mu)
        hf_norm[s] = np.sqrt(x @ (X @ x))
        beta_lb = model.beta_lb(mu)
        beta_ex = beta_exact(B, X, lu_X=lu_full) if with_exact else None
        for i, N in enumerate(Ns):
            c = reduced_solve(model, mu, N)
            xr = model.reconstruct(c).x
            e = x - xr
            err[s, i] = np.sqrt(max(e @ (X @ e), 0.0))
            rn = residual_dual_norm(model, mu, c)
            delta[s, i] = rn / beta_lb
            if with_exact:
                dex[s, i] = rn / beta_ex
    rel = err / np.where(hf_norm > 0, hf_norm, 1.0)[:, None]
    return ErrorReport(Ns, err, rel, delta, dex, hf_norm, test, model.bound_case)
