"""Projected primal-dual gradient flow acting as the control law.

For fixed plant state the flow

    z'   = -alpha * grad_z L(z, lam, mu)
    lam' =  alpha * (G z - g(xi))
    mu'  =  alpha * (h(z) - P_N(h(z), mu))

has the KKT point of the compact OCP as its equilibrium.  The control input
is ``nu = nu_bar + z[:m]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse import csr_matrix

from . import _kernels
from .lti import Equilibrium
from .ocp import CompactOcp, lagrangian_gradient

log = logging.getLogger(__name__)


@dataclass
class PrimalDualState:
    z: np.ndarray
    lam: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)

    def pack(self) -> np.ndarray:
        return np.concatenate([self.z, self.lam, self.mu])

    @classmethod
    def unpack(cls, vec, n_z, n_lambda):
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:n_z].copy(), vec[n_z:n_z + n_lambda].copy(), vec[n_z + n_lambda:].copy())

    def copy(self):
        return PrimalDualState(self.z.copy(), self.lam.copy(), self.mu.copy())

    def check(self):
        if not (np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.lam)) and np.all(np.isfinite(self.mu))):
            raise FloatingPointError("primal-dual state is not finite")
        if np.any(self.mu < 0):
            raise ValueError("negative inequality multiplier")


@dataclass(frozen=True)
class FlowParams:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


def normal_cone_projection(h, mu):
    """Closest point to ``h`` in the normal cone of the orthant at ``mu``.

    Entries with ``mu_i > 0`` project to zero; at ``mu_i = 0`` the cone is the
    nonpositive half-line, so ``h_i`` survives only when negative.
    """
    h = np.asarray(h, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0):
        raise ValueError("normal cone is empty for negative multipliers")
    return np.where((mu == 0) & (h < 0), h, 0.0)


def flow_field(compact: CompactOcp, p: PrimalDualState, params: FlowParams, xi) -> PrimalDualState:
    a = params.alpha
    hz = compact.h(p.z)
    return PrimalDualState(
        -a * lagrangian_gradient(compact, p, xi),
        a * (compact.G @ p.z - compact.g(xi)),
        a * (hz - normal_cone_projection(hz, p.mu)),
    )


def control_output(p: PrimalDualState, equilibrium: Equilibrium, m=None):
    m = equilibrium.nu_bar.size if m is None else m
    return equilibrium.nu_bar + p.z[:m]


def init_state(compact: CompactOcp, xi, mode="rollout") -> PrimalDualState:
    """Starting point of the flow.

    ``zeros`` is the origin of the shifted coordinates; ``rollout`` simulates
    the terminal gain over the horizon so the dynamics rows hold exactly;
    ``oracle`` starts at the KKT point computed by the active-set solver.
    """
    lay = compact.layout
    z = np.zeros(lay.n_z)
    lam = np.zeros(lay.n_lambda)
    mu = np.zeros(compact.n_h)
    if mode == "zeros":
        return PrimalDualState(z, lam, mu)
    if mode == "oracle":
        from .qp import QpProblem, solve_active_set

        sol = solve_active_set(QpProblem.from_compact(compact, xi))
        return PrimalDualState(sol.z_star, sol.lambda_star, sol.mu_star)
    if mode != "rollout":
        raise ValueError(f"unknown init mode {mode!r}")
    spec = compact.spec
    A, B, K = spec.plant.A, spec.plant.B, spec.K
    chi = compact.shift(xi)
    for k in range(lay.N):
        u = K @ chi
        chi = A @ chi + B @ u
        z[lay.u_slice(k)] = u
        z[lay.x_slice(k + 1)] = chi
    return PrimalDualState(z, lam, mu)


def saddle_matrix(compact: CompactOcp) -> np.ndarray:
    """Dense linear part of the unprojected field (divided by alpha)."""
    if not compact.linear_only:
        raise ValueError("saddle matrix needs linear inequality rows")
    nz, nl, nh = compact.n_z, compact.n_lambda, compact.n_h
    S = np.zeros((nz + nl + nh, nz + nl + nh))
    S[:nz, :nz] = -compact.cost_hessian
    S[:nz, nz:nz + nl] = -compact.G.T
    S[:nz, nz + nl:] = -compact.H.T
    S[nz:nz + nl, :nz] = compact.G
    S[nz + nl:, :nz] = compact.H
    return S


def rk4_step_size(compact: CompactOcp, alpha, factor=0.1):
    """``factor / (alpha * ||S||_2)`` with ``S`` the saddle matrix."""
    return factor / (alpha * np.linalg.norm(saddle_matrix(compact), 2))


class FlowSystem:
    """Flow integrator bound to one OCP structure.

    Only the reference-dependent offsets change between calls to
    :meth:`refresh`; matrices are converted to CSR once.
    """

    def __init__(self, compact: CompactOcp, params: FlowParams, method="rk4", backend=None):
        if method not in ("rk4", "implicit"):
            raise ValueError(f"unknown flow integrator {method!r}")
        self.method = method
        self.params = params
        self.compact = compact
        self.n_z, self.n_lambda, self.n_h = compact.n_z, compact.n_lambda, compact.n_h
        self.mu_start = self.n_z + self.n_lambda
        self._advance = _kernels.backends()[backend] if backend else _kernels.advance_rk4
        if compact.linear_only:
            S = csr_matrix(saddle_matrix(compact))
            self._S = (S.indptr.astype(np.int32), S.indices.astype(np.int32), S.data.copy())
            Cx = np.vstack([-compact.q_map, -compact.g_map, np.zeros((self.n_h, compact.q_map.shape[1]))])
            C = csr_matrix(Cx)
            self._C = (C.indptr.astype(np.int32), C.indices.astype(np.int32), C.data.copy())
        elif method == "implicit" or backend == "compiled":
            raise ValueError("quadratic terminal rows are only supported by the numpy RK4 path")
        self._chol_cache: dict = {}
        self.refresh(compact)

    def refresh(self, compact: CompactOcp):
        self.compact = compact
        self._c0 = np.concatenate([np.zeros(self.n_z + self.n_lambda), compact.h0])

    def field(self, p: PrimalDualState, xi) -> PrimalDualState:
        return flow_field(self.compact, p, self.params, xi)

    def suggested_step(self, factor=0.1):
        if self.method == "implicit":
            return None
        return rk4_step_size(self.compact, self.params.alpha, factor)

    def advance(self, p: PrimalDualState, xi, h, nsteps, Af=None, Bf=None):
        """Integrate ``nsteps`` flow steps; the plant moves alongside when
        ``Af, Bf`` are given, otherwise ``xi`` is frozen.

        Returns ``(p, xi, mu_min)`` with ``mu_min`` the most negative
        multiplier before clamping.
        """
        xi = np.array(xi, dtype=float)
        n = xi.size
        m = self.compact.equilibrium.nu_bar.size
        Af = np.eye(n) if Af is None else np.ascontiguousarray(Af, dtype=float)
        Bf = np.zeros((n, m)) if Bf is None else np.ascontiguousarray(Bf, dtype=float)
        if self.method == "implicit":
            return self._advance_implicit(p, xi, h, nsteps, Af, Bf)
        if not self.compact.linear_only:
            return self._advance_numpy(p, xi, h, nsteps, Af, Bf)
        vec = p.pack()
        eq = self.compact.equilibrium
        mu_min = self._advance(
            *self._S, *self._C, self._c0, np.ascontiguousarray(eq.xi_bar, dtype=float),
            np.ascontiguousarray(eq.nu_bar, dtype=float), vec, xi, Af, Bf,
            float(self.params.alpha), float(h), int(nsteps), int(self.mu_start),
        )
        return PrimalDualState.unpack(vec, self.n_z, self.n_lambda), xi, float(mu_min)

    def _advance_numpy(self, p, xi, h, nsteps, Af, Bf):
        eq = self.compact.equilibrium
        m = eq.nu_bar.size
        mu_min = 0.0

        c = self.compact
        a = self.params.alpha
        qv, gv = c.q(xi), c.g(xi)

        def f(q):
            # same stage rule as the kernels: RK stages may carry slightly
            # negative multipliers, which count as zero for the projection
            z, lam, mu = q[:self.n_z], q[self.n_z:self.mu_start], q[self.mu_start:]
            hz = c.h(z)
            dz = -(c.cost_hessian @ z + qv + c.G.T @ lam + c.h_jacobian(z).T @ mu)
            dm = hz.copy()
            dm[(mu <= 0) & (dm < 0)] = 0.0
            return a * np.concatenate([dz, c.G @ z - gv, dm])

        vec = p.pack()
        for _ in range(int(nsteps)):
            nu = eq.nu_bar + vec[:m]
            k1 = f(vec)
            k2 = f(vec + 0.5 * h * k1)
            k3 = f(vec + 0.5 * h * k2)
            k4 = f(vec + h * k3)
            vec = vec + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            mu_min = min(mu_min, float(vec[self.mu_start:].min(initial=0.0)))
            vec[self.mu_start:] = np.maximum(vec[self.mu_start:], 0.0)
            xi = Af @ xi + Bf @ nu
        return PrimalDualState.unpack(vec, self.n_z, self.n_lambda), xi, mu_min

    # backward Euler on the projected flow
    def _factor(self, active, s):
        key = (active.tobytes(), s)
        fac = self._chol_cache.get(key)
        if fac is None:
            c = self.compact
            HA = c.H[active]
            M = np.eye(self.n_z) + s * c.cost_hessian + s * s * (c.G.T @ c.G) + s * s * (HA.T @ HA)
            fac = cho_factor(M)
            if len(self._chol_cache) > 4096:
                self._chol_cache.clear()
            self._chol_cache[key] = fac
        return fac

    def implicit_step(self, p: PrimalDualState, xi, h, max_sweeps=30):
        """One proximal step ``p+ = p + h * k(p+)`` for the projected field.

        The multiplier update is ``mu+ = max(0, mu + s h(z+))``; the set of
        rows with a positive update is found by fixed-point sweeps.
        """
        c = self.compact
        s = h * self.params.alpha
        q, g = c.q(xi), c.g(xi)
        rhs0 = p.z - s * q - s * (c.G.T @ (p.lam - s * g))
        active = (p.mu + s * (c.H @ p.z + c.h0)) > 0
        for _ in range(max_sweeps):
            HA = c.H[active]
            rhs = rhs0 - s * (HA.T @ (p.mu[active] + s * c.h0[active]))
            z = cho_solve(self._factor(active, s), rhs)
            trial = p.mu + s * (c.H @ z + c.h0)
            new_active = trial > 0
            if np.array_equal(new_active, active):
                break
            active = new_active
        else:
            log.debug("implicit flow step: active set did not settle after %d sweeps", max_sweeps)
        lam = p.lam + s * (c.G @ z - g)
        mu = np.maximum(trial, 0.0)
        return PrimalDualState(z, lam, mu)

    def _advance_implicit(self, p, xi, h, nsteps, Af, Bf):
        eq = self.compact.equilibrium
        m = eq.nu_bar.size
        for _ in range(int(nsteps)):
            nu = eq.nu_bar + p.z[:m]
            p = self.implicit_step(p, xi, h)
            xi = Af @ xi + Bf @ nu
        return p, xi, 0.0
