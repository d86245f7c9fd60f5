"""Finite-horizon linear-quadratic OCP in compact form.

Decision vector, in coordinates shifted by the steady state of the reference::

    z = (u_0 - nu_bar, x_1 - xi_bar, u_1 - nu_bar, x_2 - xi_bar, ..., u_{N-1} - nu_bar, x_N - xi_bar)

so ``n_z = N (n + m)``.  The measured state only enters through the first
dynamics block of ``g`` and, when the cost has a cross term, through the
linear cost on ``u_0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lti import DiscretePlant, Equilibrium, PolytopicConstraints, constraint_values


class InadmissibleReference(ValueError):
    pass


@dataclass(frozen=True)
class DecisionLayout:
    N: int
    n: int
    m: int

    @property
    def n_z(self) -> int:
        return self.N * (self.n + self.m)

    @property
    def n_lambda(self) -> int:
        return self.N * self.n

    def u_slice(self, k: int) -> slice:
        """u_k block, k = 0..N-1."""
        if not 0 <= k < self.N:
            raise IndexError(k)
        o = k * (self.n + self.m)
        return slice(o, o + self.m)

    def x_slice(self, k: int) -> slice:
        """x_k block, k = 1..N."""
        if not 1 <= k <= self.N:
            raise IndexError(k)
        o = (k - 1) * (self.n + self.m) + self.m
        return slice(o, o + self.n)

    def blocks(self):
        """Yield ``(kind, k, slice)`` in storage order."""
        for k in range(self.N):
            yield "u", k, self.u_slice(k)
            yield "x", k + 1, self.x_slice(k + 1)

    def states(self, z):
        return np.stack([z[self.x_slice(k)] for k in range(1, self.N + 1)])

    def inputs(self, z):
        return np.stack([z[self.u_slice(k)] for k in range(self.N)])


def terminal_gain(plant: DiscretePlant, P, Q, U, R, tau):
    """K = -(tau R + B'PB)^{-1} (B'PA + tau U')."""
    A, B = plant.A, plant.B
    return -np.linalg.solve(tau * R + B.T @ P @ B, B.T @ P @ A + tau * U.T)


@dataclass(frozen=True)
class OcpSpec:
    N: int
    tau: float
    Q: np.ndarray
    U: np.ndarray
    R: np.ndarray
    P: np.ndarray
    plant: DiscretePlant
    constraints: PolytopicConstraints
    include_terminal_rows: bool = False
    terminal: object = None  # TerminalData, only needed with terminal rows
    K: np.ndarray = field(default=None)

    def __post_init__(self):
        n, m = self.plant.n, self.plant.m
        Q = np.asarray(self.Q, dtype=float).reshape(n, n)
        U = np.zeros((n, m)) if self.U is None else np.asarray(self.U, dtype=float).reshape(n, m)
        R = np.asarray(self.R, dtype=float).reshape(m, m)
        P = np.asarray(self.P, dtype=float).reshape(n, n)
        if self.N < 1:
            raise ValueError("horizon must have at least one step")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be symmetric positive definite")
        if not np.allclose(Q, Q.T):
            raise ValueError("Q must be symmetric")
        schur = Q - U @ np.linalg.solve(R, U.T)
        if np.linalg.eigvalsh(0.5 * (schur + schur.T)).min() < -1e-9:
            raise ValueError("Q - U R^-1 U' must be positive semidefinite")
        if not np.allclose(P, P.T, atol=1e-9 * max(1.0, np.abs(P).max())) or np.linalg.eigvalsh(
            0.5 * (P + P.T)
        ).min() <= 0:
            raise ValueError("P must be symmetric positive definite")
        if self.include_terminal_rows and self.terminal is None:
            raise ValueError("terminal rows requested without terminal data")
        K = self.K
        if K is None:
            K = terminal_gain(self.plant, P, Q, U, R, self.tau)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "P", 0.5 * (P + P.T))
        object.__setattr__(self, "K", np.asarray(K, dtype=float).reshape(m, n))

    @property
    def layout(self) -> DecisionLayout:
        return DecisionLayout(self.N, self.plant.n, self.plant.m)


@dataclass(frozen=True)
class CompactOcp:
    """``min 1/2 z'Hz + q(xi)'z  s.t.  G z = g(xi),  h(z) <= 0``.

    ``h`` stacks, stage by stage, the state rows on ``x_{k+1}`` followed by
    the input rows on ``u_k``; optional ellipsoidal terminal rows come last.
    """

    spec: OcpSpec
    equilibrium: Equilibrium
    cost_hessian: np.ndarray
    G: np.ndarray
    g_map: np.ndarray  # g(xi) = g_map @ (xi - xi_bar)
    q_map: np.ndarray  # q(xi) = q_map @ (xi - xi_bar)
    H: np.ndarray  # linear inequality rows
    h0: np.ndarray
    terminal_shapes: tuple = ()
    terminal_levels: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def layout(self) -> DecisionLayout:
        return self.spec.layout

    @property
    def n_z(self) -> int:
        return self.G.shape[1]

    @property
    def n_lambda(self) -> int:
        return self.G.shape[0]

    @property
    def n_h(self) -> int:
        return self.H.shape[0] + len(self.terminal_shapes)

    @property
    def linear_only(self) -> bool:
        return not self.terminal_shapes

    def shift(self, xi):
        return np.asarray(xi, dtype=float) - self.equilibrium.xi_bar

    def g(self, xi):
        return self.g_map @ self.shift(xi)

    def q(self, xi):
        return self.q_map @ self.shift(xi)

    def _terminal_block(self, z):
        return z[self.layout.x_slice(self.spec.N)]

    def h(self, z):
        lin = self.H @ z + self.h0
        if not self.terminal_shapes:
            return lin
        xN = self._terminal_block(z)
        quad = np.array([xN @ S @ xN for S in self.terminal_shapes]) - self.terminal_levels
        return np.concatenate([lin, quad])

    def h_jacobian(self, z):
        if not self.terminal_shapes:
            return self.H
        sl = self.layout.x_slice(self.spec.N)
        xN = z[sl]
        J = np.zeros((len(self.terminal_shapes), self.n_z))
        for i, S in enumerate(self.terminal_shapes):
            J[i, sl] = 2.0 * S @ xN
        return np.vstack([self.H, J])

    def objective(self, z, xi):
        return 0.5 * z @ self.cost_hessian @ z + self.q(xi) @ z

    def lagrangian(self, z, lam, mu, xi):
        return self.objective(z, xi) + lam @ (self.G @ z - self.g(xi)) + mu @ self.h(z)

    def with_reference(self, equilibrium: Equilibrium, delta=None) -> "CompactOcp":
        """Same matrices, offsets moved to a new steady state."""
        return build_compact(self.spec, equilibrium, delta=delta, _reuse=self)


def _stage_offsets(constraints: PolytopicConstraints, eq: Equilibrium):
    return constraint_values(constraints, eq.xi_bar, eq.nu_bar)


def build_compact(spec: OcpSpec, equilibrium: Equilibrium, delta=None, _reuse=None) -> CompactOcp:
    """Assemble the compact OCP for the steady state of reference ``r``.

    ``delta`` are the static margins; with ``delta=None`` the steady state
    only needs to be strictly inside the constraints.
    """
    cons = spec.constraints
    vals = _stage_offsets(cons, equilibrium)
    bound = np.zeros_like(vals) if delta is None else -np.broadcast_to(np.asarray(delta, float), vals.shape)
    if (delta is None and np.any(vals >= 0)) or (delta is not None and np.any(vals > bound)):
        bad = [cons.labels[i] for i in np.flatnonzero(vals >= 0 if delta is None else vals > bound)]
        raise InadmissibleReference(f"reference steady state violates admissibility margins on {bad}")

    lay = spec.layout
    N, n, m = lay.N, lay.n, lay.m
    terminal_shapes: tuple = ()
    terminal_levels = np.zeros(0)
    if spec.include_terminal_rows:
        from .terminal import thresholds

        terminal_shapes = tuple(spec.terminal.shapes)
        terminal_levels = thresholds(spec.terminal, equilibrium)

    per_stage = cons.c_xi + cons.c_nu
    h0 = np.tile(vals, N)
    if _reuse is not None:
        return CompactOcp(
            spec, equilibrium, _reuse.cost_hessian, _reuse.G, _reuse.g_map, _reuse.q_map,
            _reuse.H, h0, terminal_shapes, terminal_levels,
        )

    A, B = spec.plant.A, spec.plant.B
    tau = spec.tau
    nz, nl = lay.n_z, lay.n_lambda

    Hc = np.zeros((nz, nz))
    stage = 2.0 * tau * np.block([[spec.Q, spec.U], [spec.U.T, spec.R]])
    Hc[lay.u_slice(0), lay.u_slice(0)] = 2.0 * tau * spec.R
    for k in range(1, N):
        # x_k and u_k are adjacent in storage
        o = lay.x_slice(k).start
        Hc[o:o + n + m, o:o + n + m] = stage
    xs = lay.x_slice(N)
    Hc[xs, xs] = 2.0 * spec.P

    G = np.zeros((nl, nz))
    for k in range(N):
        rows = slice(k * n, (k + 1) * n)
        G[rows, lay.x_slice(k + 1)] = np.eye(n)
        G[rows, lay.u_slice(k)] = -B
        if k > 0:
            G[rows, lay.x_slice(k)] = -A
    g_map = np.zeros((nl, n))
    g_map[:n] = A

    q_map = np.zeros((nz, n))
    q_map[lay.u_slice(0)] = 2.0 * tau * spec.U.T

    H = np.zeros((N * per_stage, nz))
    for k in range(N):
        o = k * per_stage
        H[o:o + cons.c_xi, lay.x_slice(k + 1)] = cons.state_A
        H[o + cons.c_xi:o + per_stage, lay.u_slice(k)] = cons.input_C

    for a in (Hc, G, g_map, q_map, H):
        a.setflags(write=False)
    return CompactOcp(spec, equilibrium, Hc, G, g_map, q_map, H, h0, terminal_shapes, terminal_levels)


def lagrangian_gradient(compact: CompactOcp, p, xi):
    z, lam, mu = p.z, p.lam, p.mu
    return compact.cost_hessian @ z + compact.q(xi) + compact.G.T @ lam + compact.h_jacobian(z).T @ mu


def kkt_residual(compact: CompactOcp, p, xi) -> float:
    if np.any(p.mu < 0):
        raise ValueError("multipliers of inequality rows must be nonnegative")
    stat = np.abs(lagrangian_gradient(compact, p, xi)).max(initial=0.0)
    prim = np.abs(compact.g(xi) - compact.G @ p.z).max(initial=0.0)
    comp = np.abs(np.minimum(-compact.h(p.z), p.mu)).max(initial=0.0)
    return float(max(stat, prim, comp))
