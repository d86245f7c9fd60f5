"""Small dense convex QP solvers used as ground truth.

Problem class::

    min 1/2 z'Hz + c'z   s.t.   G z = g,   A z + b <= 0

with ``H`` positive definite and ``G`` of full row rank.  Multipliers follow
the Lagrangian ``J + lam'(Gz - g) + mu'(Az + b)``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

log = logging.getLogger(__name__)


class QpError(RuntimeError):
    pass


class InfeasibleQp(QpError):
    pass


class DegenerateQp(QpError):
    pass


class CyclingError(QpError):
    pass


@dataclass(frozen=True)
class QpProblem:
    hessian: np.ndarray
    linear: np.ndarray
    G: np.ndarray
    g: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.hessian, float))
        nz = H.shape[0]
        c = np.asarray(self.linear, float).reshape(nz)
        G = np.asarray(self.G, float).reshape(-1, nz)
        g = np.asarray(self.g, float).reshape(G.shape[0])
        A = np.asarray(self.A, float).reshape(-1, nz)
        b = np.asarray(self.b, float).reshape(A.shape[0])
        if np.linalg.eigvalsh(0.5 * (H + H.T)).min() <= 0:
            raise ValueError("hessian must be positive definite")
        if G.shape[0] and np.linalg.matrix_rank(G) < G.shape[0]:
            raise ValueError("equality rows must have full row rank")
        for name, v in (("hessian", H), ("linear", c), ("G", G), ("g", g), ("A", A), ("b", b)):
            object.__setattr__(self, name, v)

    @property
    def n_z(self):
        return self.hessian.shape[0]

    @classmethod
    def from_compact(cls, compact, xi):
        if not compact.linear_only:
            raise ValueError("the QP oracle only handles linear inequality rows")
        return cls(compact.cost_hessian, compact.q(xi), compact.G, compact.g(xi), compact.H, compact.h0)


@dataclass(frozen=True)
class QpSolution:
    z_star: np.ndarray
    lambda_star: np.ndarray
    mu_star: np.ndarray
    active_set: tuple
    iterations: int = 0


def kkt_residuals(problem: QpProblem, z, lam, mu):
    """(stationarity, primal equality, primal inequality, dual, complementarity)."""
    hv = problem.A @ z + problem.b
    stat = problem.hessian @ z + problem.linear + problem.G.T @ lam + problem.A.T @ mu
    return (
        float(np.abs(stat).max(initial=0.0)),
        float(np.abs(problem.G @ z - problem.g).max(initial=0.0)),
        float(np.maximum(hv, 0).max(initial=0.0)),
        float(np.maximum(-mu, 0).max(initial=0.0)),
        float(np.abs(mu * hv).max(initial=0.0)),
    )


def _scale(problem):
    return 1.0 + max(
        np.abs(problem.linear).max(initial=0.0),
        np.abs(problem.g).max(initial=0.0),
        np.abs(problem.b).max(initial=0.0),
    )


def _kkt_solve(H, c, E, e):
    """Solve ``min 1/2 z'Hz + c'z s.t. E z = e``; None if E loses rank."""
    nz, ne = H.shape[0], E.shape[0]
    if ne > nz or (ne and np.linalg.matrix_rank(E) < ne):
        return None
    K = np.zeros((nz + ne, nz + ne))
    K[:nz, :nz] = H
    K[:nz, nz:] = E.T
    K[nz:, :nz] = E
    try:
        sol = np.linalg.solve(K, np.concatenate([-c, e]))
    except np.linalg.LinAlgError:
        return None
    return sol[:nz], sol[nz:]


def _solve_eqp(problem, rows, linear=None, homogeneous=False):
    """Equality-constrained subproblem with ``rows`` held active.

    Returns ``(z, lam, mu_rows)`` or None when the active rows are dependent.
    """
    rows = list(rows)
    E = np.vstack([problem.G, problem.A[rows]])
    if homogeneous:
        e = np.zeros(E.shape[0])
    else:
        e = np.concatenate([problem.g, -problem.b[rows]])
    res = _kkt_solve(problem.hessian, problem.linear if linear is None else linear, E, e)
    if res is None:
        return None
    z, mult = res
    ne = problem.G.shape[0]
    return z, mult[:ne], mult[ne:]


def solve_enumerate(problem: QpProblem, tol=1e-9) -> QpSolution:
    """Try every active subset; exactly one must satisfy the KKT conditions."""
    p = problem.A.shape[0]
    if p > 14:
        raise ValueError(f"enumeration is limited to 14 inequality rows, got {p}")
    scale = _scale(problem)
    found = []
    for size in range(p + 1):
        for rows in itertools.combinations(range(p), size):
            res = _solve_eqp(problem, rows)
            if res is None:
                continue
            z, lam, mu_w = res
            if np.any(problem.A @ z + problem.b > tol * scale) or np.any(mu_w < -tol * scale):
                continue
            mu = np.zeros(p)
            mu[list(rows)] = np.maximum(mu_w, 0.0)
            if any(np.abs(z - f.z_star).max() <= 1e-8 * (1 + np.abs(z).max()) for f in found):
                continue
            found.append(QpSolution(z, lam, mu, rows))
    if not found:
        raise InfeasibleQp("no active set satisfies the KKT conditions")
    if len(found) > 1:
        raise DegenerateQp(f"{len(found)} distinct KKT points: {[f.active_set for f in found]}")
    return found[0]


def feasible_point(problem: QpProblem, tol=1e-9):
    res = linprog(
        np.zeros(problem.n_z),
        A_ub=problem.A if problem.A.size else None,
        b_ub=-problem.b if problem.A.size else None,
        A_eq=problem.G if problem.G.size else None,
        b_eq=problem.g if problem.G.size else None,
        bounds=[(None, None)] * problem.n_z,
        method="highs",
    )
    if res.status != 0:
        raise InfeasibleQp(f"phase-one LP failed: {res.message}")
    z = res.x
    # pull back onto the equality manifold; LP tolerances are looser than ours
    if problem.G.size:
        z = z - np.linalg.lstsq(problem.G, problem.G @ z - problem.g, rcond=None)[0]
    return z


def solve_active_set(problem: QpProblem, z0=None, tol=1e-9, max_iter=None) -> QpSolution:
    """Primal active-set method from a feasible start.

    ``z0`` is used when it is feasible; otherwise a phase-one LP supplies the
    start.  Ties are broken towards the lowest row index.  ``iterations`` in
    the result counts primal steps and working-set changes.
    """
    A, b = problem.A, problem.b
    p = A.shape[0]
    scale = _scale(problem)
    ftol = tol * scale
    z = None
    if z0 is not None:
        z0 = np.asarray(z0, float)
        if (
            np.abs(problem.G @ z0 - problem.g).max(initial=0.0) <= ftol
            and (A @ z0 + b).max(initial=-1.0) <= ftol
        ):
            z = z0.copy()
    if z is None:
        z = feasible_point(problem, tol)

    max_iter = max_iter or 20 * (problem.n_z + p + 10)
    work: list[int] = []
    seen_stalled: set = set()
    at_minimizer = False
    for it in range(1, max_iter + 1):
        if not at_minimizer:
            # step towards the minimizer on the current working set
            grad = problem.hessian @ z + problem.linear
            res = _solve_eqp(problem, sorted(work), linear=grad, homogeneous=True)
            if res is None:
                raise QpError(f"working set {sorted(work)} lost linear independence")
            step, _, _ = res
            at_minimizer = np.abs(step).max(initial=0.0) <= 1e-12 * (1 + np.abs(z).max())
        if at_minimizer:
            full = _solve_eqp(problem, sorted(work))
            if full is None:
                raise QpError("singular KKT system at termination")
            _, lam, mu_w = full
            order = sorted(work)
            if mu_w.size == 0 or mu_w.min() >= -ftol:
                mu = np.zeros(p)
                mu[order] = np.maximum(mu_w, 0.0)
                # report the solution of the exact equality-constrained system
                z_fin = full[0]
                # the final pass only confirms optimality
                return QpSolution(z_fin, lam, mu, tuple(order), it - 1)
            drop = order[int(np.flatnonzero(mu_w == mu_w.min())[0])]
            work.remove(drop)
            at_minimizer = False
            continue
        Ap = A @ step
        alpha, block = 1.0, None
        for i in range(p):
            if i in work or Ap[i] <= 1e-14 * (1 + np.abs(A[i]).max()):
                continue
            room = max(-(A[i] @ z + b[i]), 0.0)
            t = room / Ap[i]
            if t < alpha - 1e-15:
                alpha, block = t, i
        z = z + alpha * step
        # an unblocked full step lands on the working-set minimizer; testing
        # the next step against zero would only measure rounding
        at_minimizer = block is None
        if block is not None:
            key = (tuple(sorted(work)), block)
            if alpha == 0.0:
                if key in seen_stalled:
                    raise CyclingError(f"working set {sorted(work)} repeated without progress")
                seen_stalled.add(key)
            else:
                seen_stalled.clear()
            work.append(block)
    raise CyclingError(f"no convergence after {max_iter} iterations")
