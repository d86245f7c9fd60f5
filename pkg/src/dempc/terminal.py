"""Terminal cost, gain and ellipsoidal terminal set for the LQ case."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .lti import DiscretePlant, Equilibrium, PolytopicConstraints


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True)
class TerminalData:
    """Terminal ingredients for every constraint row.

    Row ``i`` reads ``rows[i] @ x + b_i(r) <= 0`` with
    ``b_i(r) = b_const[i] + b_nu[i] @ nu_bar + b_xi[i] @ xi_bar``; state rows
    keep a constant offset while input rows are lifted through ``K``.
    """

    P: np.ndarray
    K: np.ndarray
    shapes: tuple
    rows: np.ndarray
    b_const: np.ndarray
    b_nu: np.ndarray
    b_xi: np.ndarray
    labels: tuple = ()

    @property
    def n_h(self) -> int:
        return self.rows.shape[0]

    @cached_property
    def closed_loop_weights(self) -> np.ndarray:
        """a_i S_i^{-1} a_i' per row."""
        return np.array([a @ np.linalg.solve(S, a) for a, S in zip(self.rows, self.shapes)])

    @cached_property
    def shape_stack(self) -> np.ndarray:
        return np.stack(self.shapes)

    def quadratic_values(self, e) -> np.ndarray:
        """e' S_i e for every row."""
        return np.einsum("i,kij,j->k", e, self.shape_stack, e)

    def offsets(self, eq: Equilibrium) -> np.ndarray:
        return self.b_const + self.b_nu @ eq.nu_bar + self.b_xi @ eq.xi_bar

    def margins(self, eq: Equilibrium) -> np.ndarray:
        """a_i xi_bar + b_i(r); negative inside."""
        return self.rows @ eq.xi_bar + self.offsets(eq)


def solve_dare(discrete: DiscretePlant, Q, U, R, tau, max_iter=100_000, rtol=1e-12):
    """Fixed-point Riccati iteration; returns ``(P, K)``."""
    A, B = discrete.A, discrete.B
    n, m = B.shape
    Q = np.asarray(Q, float).reshape(n, n)
    R = np.asarray(R, float).reshape(m, m)
    U = np.zeros((n, m)) if U is None else np.asarray(U, float).reshape(n, m)
    tQ, tU, tR = tau * Q, tau * U, tau * R
    P = tQ + 1e-6 * max(1.0, np.abs(tQ).max()) * np.eye(n)
    atol = 1e-300
    for _ in range(max_iter):
        S = tR + B.T @ P @ B
        L = A.T @ P @ B + tU
        P_next = tQ + A.T @ P @ A - L @ np.linalg.solve(S, L.T)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise SynthesisError("Riccati iteration diverged")
        done = np.abs(P_next - P).max() <= rtol * np.abs(P).max() + atol
        P = P_next
        if done:
            break
    else:
        raise SynthesisError(f"Riccati iteration did not converge in {max_iter} steps")
    K = -np.linalg.solve(tR + B.T @ P @ B, B.T @ P @ A + tU.T)
    return P, K


def dare_residual(discrete: DiscretePlant, P, K, Q, U, R, tau):
    A, B = discrete.A, discrete.B
    U = np.zeros(B.shape) if U is None else U
    return A.T @ P @ A - P + (A.T @ P @ B + tau * U) @ K + tau * Q


def lift_input_rows(constraints: PolytopicConstraints, K):
    """Input rows rewritten as state rows under ``nu = nu_bar + K (x - xi_bar)``.

    Returns ``(rows, b_const, b_nu, b_xi)``; ``b_xi = -c_j K`` and
    ``b_nu = c_j`` so the lifted row at ``x`` equals
    ``c_j (nu_bar + K (x - xi_bar)) + d_j``.
    """
    C = constraints.input_C
    return C @ K, constraints.input_d.copy(), C.copy(), -(C @ K)


def discrete_lyapunov(Acl, rhs):
    """Solve ``Acl' S Acl - S = -rhs`` through the vectorized linear system."""
    n = Acl.shape[0]
    M = np.kron(Acl.T, Acl.T) - np.eye(n * n)
    try:
        s = np.linalg.solve(M, -rhs.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise SynthesisError("discrete Lyapunov equation is singular") from exc
    S = s.reshape(n, n, order="F")
    return 0.5 * (S + S.T)


def shape_matrix(a_i, K, discrete: DiscretePlant, eps_scale=1e-6):
    """Feasible (not volume-optimal) invariant ellipsoid shape for one row.

    ``S0`` solves the closed-loop Lyapunov equation with a small identity
    right-hand side and is scaled by ``a S0^{-1} a'`` so that ``S >= a'a``
    holds with equality along ``a``.
    """
    a = np.asarray(a_i, float).reshape(-1)
    Acl = discrete.A + discrete.B @ K
    if np.abs(np.linalg.eigvals(Acl)).max() >= 1:
        raise SynthesisError("terminal closed loop is not Schur stable")
    if not np.any(a):
        raise ValueError("zero constraint row")
    n = a.size
    S0 = discrete_lyapunov(Acl, eps_scale * (a @ a) * np.eye(n))
    beta = a @ np.linalg.solve(S0, a)
    S = beta * S0
    # guard the rank-one contact against rounding
    w = np.linalg.eigvalsh(S - np.outer(a, a)).min()
    if w < 0:
        S = S + (-w) * np.eye(n)
    return 0.5 * (S + S.T)


def shape_checks(S, a_i, K, discrete: DiscretePlant):
    """Smallest eigenvalues of the three ellipsoid conditions.

    Returns ``(decrease, cover, definite)``: max eigenvalue of
    ``Acl'S Acl - S`` and min eigenvalues of ``S - a'a`` and ``S``.
    """
    Acl = discrete.A + discrete.B @ K
    D = Acl.T @ S @ Acl - S
    a = np.asarray(a_i, float).reshape(-1)
    return (
        float(np.linalg.eigvalsh(0.5 * (D + D.T)).max()),
        float(np.linalg.eigvalsh(S - np.outer(a, a)).min()),
        float(np.linalg.eigvalsh(S).min()),
    )


def synthesize(discrete: DiscretePlant, constraints: PolytopicConstraints, Q, U, R, tau, eps_scale=1e-6):
    P, K = solve_dare(discrete, Q, U, R, tau)
    n, m = discrete.n, discrete.m
    lifted, d, c_nu, c_xi = lift_input_rows(constraints, K)
    rows = np.vstack([constraints.state_A, lifted]).reshape(-1, n)
    b_const = np.concatenate([constraints.state_b, d])
    b_nu = np.vstack([np.zeros((constraints.c_xi, m)), c_nu]).reshape(-1, m)
    b_xi = np.vstack([np.zeros((constraints.c_xi, n)), c_xi]).reshape(-1, n)
    shapes = tuple(shape_matrix(a, K, discrete, eps_scale) for a in rows)
    return TerminalData(P, K, shapes, rows, b_const, b_nu, b_xi, tuple(constraints.labels))


def threshold(S_i, a_i, margin):
    """Largest level of ``(x - xi_bar)' S_i (x - xi_bar)`` inside one row.

    ``margin`` is ``a_i xi_bar + b_i(r)`` and must be negative.
    """
    if margin >= 0:
        raise ValueError("steady state is not strictly inside the row; threshold undefined")
    a = np.asarray(a_i, float).reshape(-1)
    return margin**2 / (a @ np.linalg.solve(S_i, a))


def thresholds(data: TerminalData, eq: Equilibrium, weights=None) -> np.ndarray:
    marg = data.margins(eq)
    if np.any(marg >= 0):
        raise ValueError("reference is infeasible: some terminal threshold is not positive")
    if weights is None:
        weights = data.closed_loop_weights
    return marg**2 / weights


def lyapunov_values(data: TerminalData, x, eq: Equilibrium) -> np.ndarray:
    return data.quadratic_values(np.asarray(x, float) - eq.xi_bar)


def terminal_membership(x, eq: Equilibrium, data: TerminalData, weights=None):
    """``(member, min_i (Gamma_i - V_i)/Gamma_i)``."""
    gam = thresholds(data, eq, weights)
    margin = float(np.min((gam - lyapunov_values(data, x, eq)) / gam))
    return margin >= 0, margin


def terminal_step(x, eq: Equilibrium, data: TerminalData, discrete: DiscretePlant):
    """One step of the terminal law ``nu = nu_bar + K (x - xi_bar)``."""
    nu = eq.nu_bar + data.K @ (np.asarray(x, float) - eq.xi_bar)
    return discrete.A @ x + discrete.B @ nu, nu


def verify_discretization(plant, discrete: DiscretePlant, K, P, Q, R, tau, epsilon, U=None):
    """Eigenvalue test ``epsilon (Q + K'RK) - E~(tau)/tau > 0``.

    ``E~`` bounds the mismatch between the discrete and continuous
    closed-loop Lyapunov decrease for the sampled terminal law.  With a cross
    weight ``U`` the stage weight also carries ``UK + K'U'``.
    """
    n = discrete.n
    Acl_c = plant.A_c + plant.B_c @ K
    E = (discrete.A + discrete.B @ K) - (np.eye(n) + tau * Acl_c)
    Et = (
        E.T @ P + P @ E + 2 * E.T @ P @ E
        + tau * (Acl_c.T @ P @ E + E.T @ P @ Acl_c)
        + 2 * tau**2 * Acl_c.T @ P @ Acl_c
    )
    W = Q + K.T @ R @ K
    if U is not None:
        W = W + U @ K + K.T @ U.T
    M = epsilon * W - Et / tau
    return bool(np.linalg.eigvalsh(0.5 * (M + M.T)).min() > 0)
