"""Two-point boundary-value solver: 4-point Lobatto IIIa collocation.

The tableau and the degree-4 continuous extension are derived at import time
from the collocation definition (integrated Lagrange bases on the Lobatto
abscissae) rather than transcribed from a table.  On every mesh subinterval
the solution polynomial satisfies the ODE exactly at the four Lobatto points;
the resulting global system is solved by a damped Newton iteration with
forward-difference Jacobians, and the mesh is refined wherever the sampled
residual of the collocation polynomial exceeds the tolerance.

Error control is residual based.  The scaled residual uses a componentwise
mixed absolute/relative scale with floor 1.0:

    scale_m = max(1.0, max_s |y_m(s)|, max_s |y'_m(s)|)

The solver holds no global state; any number of solves may run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

_SQRT_EPS = math.sqrt(np.finfo(float).eps)

# Lobatto abscissae for the 4-point formula on [0, 1]
_C = np.array([0.0, (5.0 - math.sqrt(5.0)) / 10.0, (5.0 + math.sqrt(5.0)) / 10.0, 1.0])


def _lagrange_polys(nodes: np.ndarray) -> list[Polynomial]:
    polys = []
    for j, xj in enumerate(nodes):
        p = Polynomial([1.0])
        for k, xk in enumerate(nodes):
            if k != j:
                p = p * Polynomial([-xk, 1.0]) / (xj - xk)
        polys.append(p)
    return polys


_L = _lagrange_polys(_C)                      # stage interpolation basis
_B = [p.integ() for p in _L]                  # running integrals, B_j(0) = 0
_A = np.array([[float(b(c)) for b in _B] for c in _C])  # a_ij = B_j(c_i)

# residual sample offsets: Gauss-Legendre 5, none coincide with Lobatto points
_RES_THETA = 0.5 * (np.polynomial.legendre.leggauss(5)[0] + 1.0)
_RES_L = np.array([[float(p(t)) for p in _L] for t in _RES_THETA])   # (5, 4)
_RES_B = np.array([[float(b(t)) for b in _B] for t in _RES_THETA])   # (5, 4)


class BvpStatus(Enum):
    CONVERGED = "Converged"
    MAX_MESH = "MaxMesh"
    NEWTON_DIVERGED = "NewtonDiverged"


@dataclass
class BvpProblem:
    """First-order system y' = rhs(s, y) with two-point boundary conditions.

    rhs is vectorized: rhs(s: (P,), y: (M, P)) -> (M, P).
    bc(ya: (M,), yb: (M,)) -> (M,) residuals, zero at the solution.
    guess maps s: (P,) -> (M, P); defaults to zeros.
    """

    ndim: int
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    bc: Callable[[np.ndarray, np.ndarray], np.ndarray]
    interval: tuple[float, float]
    tol: float = 1e-8
    initial_mesh: np.ndarray | None = None
    guess: Callable[[np.ndarray], np.ndarray] | None = None
    rhs_jac: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    max_nodes: int = 10_000
    max_newton: int = 50


@dataclass
class BvpSolution:
    mesh: np.ndarray
    y: np.ndarray                   # (M, K+1) values at mesh nodes
    stage_f: np.ndarray             # (M, 4, K) stage derivatives per interval
    status: BvpStatus
    est_residual: float
    newton_iterations: int = 0
    meshes_tried: int = 1

    @property
    def n_nodes(self) -> int:
        return len(self.mesh)

    def interpolate(self, s) -> np.ndarray:
        """Evaluate the collocation polynomial; (M,) for scalar s, else (M, P)."""
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        k = np.clip(np.searchsorted(self.mesh, s_arr, side="right") - 1, 0, len(self.mesh) - 2)
        h = self.mesh[k + 1] - self.mesh[k]
        theta = (s_arr - self.mesh[k]) / h
        out = self.y[:, k].copy()
        for j in range(4):
            out += h * _B[j](theta) * self.stage_f[:, j, k]
        return out[:, 0] if np.ndim(s) == 0 else out


def _stage_abscissae(mesh: np.ndarray) -> np.ndarray:
    """All collocation points; stage 4 of interval k is stage 1 of interval k+1."""
    h = np.diff(mesh)
    s = np.empty(3 * (len(mesh) - 1) + 1)
    s[::3] = mesh
    s[1::3] = mesh[:-1] + _C[1] * h
    s[2::3] = mesh[:-1] + _C[2] * h
    return s


def _initial_y(problem: BvpProblem, s: np.ndarray) -> np.ndarray:
    if problem.guess is None:
        return np.zeros((problem.ndim, len(s)))
    y = np.asarray(problem.guess(s), dtype=float)
    if y.shape != (problem.ndim, len(s)):
        raise ValueError(f"guess returned shape {y.shape}, expected {(problem.ndim, len(s))}")
    return y.copy()


class _Collocation:
    """Residual/Jacobian assembly for one fixed mesh."""

    def __init__(self, problem: BvpProblem, mesh: np.ndarray):
        self.p = problem
        self.mesh = mesh
        self.h = np.diff(mesh)
        self.K = len(mesh) - 1
        self.M = problem.ndim
        self.s = _stage_abscissae(mesh)
        self.cols = 3 * np.arange(self.K)[:, None] + np.arange(4)[None, :]  # (K, 4)
        self._index_structure()

    def _index_structure(self):
        M, K = self.M, self.K
        rows, cols = [], []
        for i in range(3):               # stages 2..4
            for j in range(4):
                rb = (3 * np.arange(K) + i) * M
                cb = self.cols[:, j] * M
                r = rb[:, None, None] + np.arange(M)[None, :, None] + np.zeros(M, dtype=int)[None, None, :]
                c = cb[:, None, None] + np.zeros(M, dtype=int)[None, :, None] + np.arange(M)[None, None, :]
                rows.append(r.ravel())
                cols.append(c.ravel())
        rbc = 3 * K * M + np.arange(M)
        for cb in (0, 3 * K * M):
            r = rbc[:, None] + np.zeros(M, dtype=int)[None, :]
            c = cb + np.zeros(M, dtype=int)[:, None] + np.arange(M)[None, :]
            rows.append(r.ravel())
            cols.append(c.ravel())
        self._rows = np.concatenate(rows)
        self._cols = np.concatenate(cols)
        self.nunk = (3 * K + 1) * M

    def eval_f(self, y: np.ndarray) -> np.ndarray:
        f = np.asarray(self.p.rhs(self.s, y), dtype=float)
        if f.shape != y.shape:
            raise ValueError(f"rhs returned shape {f.shape}, expected {y.shape}")
        return f

    def residual(self, y: np.ndarray, f: np.ndarray) -> np.ndarray:
        M, K = self.M, self.K
        F = np.empty(self.nunk)
        y_stage = y[:, self.cols]                      # (M, K, 4)
        f_stage = f[:, self.cols]
        for i in range(1, 4):
            G = y_stage[:, :, i] - y_stage[:, :, 0] - self.h * np.einsum("j,mkj->mk", _A[i], f_stage)
            F[(3 * np.arange(K) + (i - 1))[:, None] * M + np.arange(M)[None, :]] = G.T
        F[3 * K * M :] = self.p.bc(y[:, 0], y[:, -1])
        return F

    def fd_jacobian(self, y: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Forward differences, step sqrt(eps) * max(|y|, 1); (M, M, P)."""
        if self.p.rhs_jac is not None:
            return np.asarray(self.p.rhs_jac(self.s, y), dtype=float)
        M = self.M
        J = np.empty((M, M, y.shape[1]))
        step = _SQRT_EPS * np.maximum(np.abs(y), 1.0)
        for m in range(M):
            yp = y.copy()
            yp[m] += step[m]
            J[:, m, :] = (self.eval_f(yp) - f) / step[m]
        return J

    def jacobian(self, y: np.ndarray, f: np.ndarray):
        M, K = self.M, self.K
        Jf = self.fd_jacobian(y, f).transpose(2, 0, 1)      # (P, M, M)
        eye = np.eye(M)
        data = []
        for i in range(1, 4):
            for j in range(4):
                blocks = -(self.h * _A[i, j])[:, None, None] * Jf[self.cols[:, j]]
                if j == i:
                    blocks = blocks + eye
                if j == 0:
                    blocks = blocks - eye
                data.append(blocks.ravel())
        ya, yb = y[:, 0], y[:, -1]
        r0 = self.p.bc(ya, yb)
        dba = np.empty((M, M))
        dbb = np.empty((M, M))
        for m in range(M):
            da = _SQRT_EPS * max(abs(ya[m]), 1.0)
            ya_p = ya.copy()
            ya_p[m] += da
            dba[:, m] = (self.p.bc(ya_p, yb) - r0) / da
            db = _SQRT_EPS * max(abs(yb[m]), 1.0)
            yb_p = yb.copy()
            yb_p[m] += db
            dbb[:, m] = (self.p.bc(ya, yb_p) - r0) / db
        data.append(dba.ravel())
        data.append(dbb.ravel())
        mat = coo_matrix((np.concatenate(data), (self._rows, self._cols)), shape=(self.nunk, self.nunk))
        return mat.tocsc()

    def scale(self, y: np.ndarray, f: np.ndarray) -> np.ndarray:
        return np.maximum(1.0, np.maximum(np.abs(y).max(axis=1), np.abs(f).max(axis=1)))

    def scaled_norm(self, F: np.ndarray, scale: np.ndarray) -> float:
        M, K = self.M, self.K
        coll = np.abs(F[: 3 * K * M].reshape(3 * K, M)) / scale[None, :]
        bc = np.abs(F[3 * K * M :])
        return max(float(coll.max()) if coll.size else 0.0, float(bc.max()))

    def newton(self, y0: np.ndarray, newton_tol: float, max_iter: int):
        """Damped Newton with Armijo backtracking on the residual norm."""
        y = y0.copy()
        f = self.eval_f(y)
        F = self.residual(y, f)
        scale = self.scale(y, f)
        norm = self.scaled_norm(F, scale)
        for it in range(max_iter):
            if norm <= newton_tol:
                return y, f, norm, it, True
            J = self.jacobian(y, f)
            try:
                delta = splu(J).solve(-F)
            except RuntimeError:
                return y, f, norm, it, False
            if not np.all(np.isfinite(delta)):
                return y, f, norm, it, False
            step = delta.reshape(-1, self.M).T
            alpha, improved = 1.0, False
            for _ in range(9):
                y_try = y + alpha * step
                try:
                    f_try = self.eval_f(y_try)
                    F_try = self.residual(y_try, f_try)
                except (FloatingPointError, ValueError):
                    alpha *= 0.5
                    continue
                norm_try = self.scaled_norm(F_try, scale)
                if np.isfinite(norm_try) and norm_try <= (1.0 - 1e-4 * alpha) * norm:
                    y, f, F, norm = y_try, f_try, F_try, norm_try
                    scale = self.scale(y, f)
                    improved = True
                    break
                alpha *= 0.5
            if not improved:
                return y, f, norm, it + 1, norm <= 10.0 * newton_tol
        return y, f, norm, max_iter, norm <= 10.0 * newton_tol

    def interval_residuals(self, y: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Max scaled residual of the collocation polynomial per interval."""
        M, K = self.M, self.K
        f_stage = f[:, self.cols]                                   # (M, K, 4)
        y_left = y[:, self.cols[:, 0]]                              # (M, K)
        scale = self.scale(y, f)
        res = np.zeros(K)
        for r, theta in enumerate(_RES_THETA):
            s_mid = self.mesh[:-1] + theta * self.h
            y_mid = y_left + self.h * np.einsum("j,mkj->mk", _RES_B[r], f_stage)
            sprime = np.einsum("j,mkj->mk", _RES_L[r], f_stage)
            f_mid = np.asarray(self.p.rhs(s_mid, y_mid), dtype=float)
            res = np.maximum(res, (np.abs(sprime - f_mid) / scale[:, None]).max(axis=0))
        return res


def _pack_solution(coll: _Collocation, y: np.ndarray, f: np.ndarray, status: BvpStatus,
                   est: float, iters: int, meshes: int) -> BvpSolution:
    return BvpSolution(
        mesh=coll.mesh.copy(),
        y=y[:, ::3].copy(),
        stage_f=f[:, coll.cols].transpose(0, 2, 1).copy(),
        status=status,
        est_residual=float(est),
        newton_iterations=iters,
        meshes_tried=meshes,
    )


def _default_mesh(problem: BvpProblem) -> np.ndarray:
    if problem.initial_mesh is not None:
        mesh = np.asarray(problem.initial_mesh, dtype=float)
        if len(mesh) < 4 or np.any(np.diff(mesh) <= 0):
            raise ValueError("initial mesh must be strictly increasing with >= 3 intervals")
        return mesh
    return np.linspace(problem.interval[0], problem.interval[1], 11)


def solve(problem: BvpProblem) -> BvpSolution:
    """Solve with adaptive mesh refinement until the sampled residual meets tol.

    Deterministic: fixed iteration order, no randomness.  Failure is reported
    through the status field (NewtonDiverged / MaxMesh), never silently.
    """
    newton_tol = max(1e-13, 0.01 * problem.tol)
    mesh = _default_mesh(problem)
    y = _initial_y(problem, _stage_abscissae(mesh))
    total_iters = 0
    meshes = 0
    restarts = 0
    prev: BvpSolution | None = None

    while True:
        meshes += 1
        coll = _Collocation(problem, mesh)
        y_sol, f_sol, norm, iters, ok = coll.newton(y, newton_tol, problem.max_newton)
        total_iters += iters
        if not ok:
            # restart on a uniformly doubled mesh from the original guess
            restarts += 1
            if restarts > 3 or 2 * (len(mesh) - 1) + 1 > problem.max_nodes:
                est = float(coll.interval_residuals(y_sol, f_sol).max())
                return _pack_solution(coll, y_sol, f_sol, BvpStatus.NEWTON_DIVERGED, est, total_iters, meshes)
            fine = np.empty(2 * (len(mesh) - 1) + 1)
            fine[::2] = mesh
            fine[1::2] = 0.5 * (mesh[:-1] + mesh[1:])
            mesh = fine
            y = _initial_y(problem, _stage_abscissae(mesh))
            prev = None
            continue

        res = coll.interval_residuals(y_sol, f_sol)
        est = float(res.max()) if len(res) else 0.0
        if est <= problem.tol:
            return _pack_solution(coll, y_sol, f_sol, BvpStatus.CONVERGED, est, total_iters, meshes)

        # subdivide offending intervals, keeping every existing node
        pieces = []
        for k in range(coll.K):
            pieces.append(mesh[k])
            if res[k] > problem.tol:
                nsplit = int(np.clip(math.ceil((res[k] / problem.tol) ** 0.2), 2, 4))
                pieces.extend(mesh[k] + (np.arange(1, nsplit) / nsplit) * coll.h[k])
        pieces.append(mesh[-1])
        new_mesh = np.array(pieces)
        if len(new_mesh) > problem.max_nodes:
            return _pack_solution(coll, y_sol, f_sol, BvpStatus.MAX_MESH, est, total_iters, meshes)
        prev = _pack_solution(coll, y_sol, f_sol, BvpStatus.MAX_MESH, est, total_iters, meshes)
        mesh = new_mesh
        y = prev.interpolate(_stage_abscissae(mesh))


def solve_fixed_mesh(problem: BvpProblem, mesh: np.ndarray) -> BvpSolution:
    """Newton solve on the given mesh with no adaptivity (verification harness)."""
    mesh = np.asarray(mesh, dtype=float)
    coll = _Collocation(problem, mesh)
    y0 = _initial_y(problem, coll.s)
    newton_tol = max(1e-13, 0.01 * problem.tol)
    y_sol, f_sol, norm, iters, ok = coll.newton(y0, newton_tol, problem.max_newton)
    res = coll.interval_residuals(y_sol, f_sol)
    status = BvpStatus.CONVERGED if ok else BvpStatus.NEWTON_DIVERGED
    return _pack_solution(coll, y_sol, f_sol, status, float(res.max()), iters, 1)


@dataclass
class OrderFit:
    order: float
    mesh_sizes: list[int]
    errors: list[float]


def empirical_order(problem: BvpProblem, exact: Callable[[np.ndarray], np.ndarray],
                    mesh_sizes: list[int], n_samples: int = 400) -> OrderFit:
    """Fitted convergence order on uniform meshes, max interpolant error vs h.

    The error is measured through the collocation polynomial on a dense sample
    between mesh nodes (the uniform, not superconvergent, error).
    """
    a, b = problem.interval
    ss = np.linspace(a, b, n_samples)
    errs, hs = [], []
    for n in mesh_sizes:
        mesh = np.linspace(a, b, n + 1)
        sol = solve_fixed_mesh(problem, mesh)
        if sol.status is not BvpStatus.CONVERGED:
            continue
        err = float(np.abs(sol.interpolate(ss) - np.asarray(exact(ss))).max())
        if err < 1e-14:  # at machine precision the fit is meaningless
            continue
        errs.append(err)
        hs.append((b - a) / n)
    if len(errs) < 2:
        return OrderFit(order=float("nan"), mesh_sizes=mesh_sizes, errors=errs)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    return OrderFit(order=float(slope), mesh_sizes=mesh_sizes, errors=errs)
