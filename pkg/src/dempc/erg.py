"""Explicit reference governor: r' = Delta(x_N, r) * rho(r, gamma)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lti import ContinuousPlant, Equilibrium, PolytopicConstraints, reference_maps
from .qp import InfeasibleQp, QpProblem, solve_active_set
from .terminal import TerminalData


class EmptyReferenceSet(ValueError):
    pass


@dataclass(frozen=True)
class ErgParams:
    kappa: float
    eta: float
    delta: np.ndarray
    zeta: np.ndarray
    W: np.ndarray
    W_mode: str = "identity"

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=float).reshape(-1)
        zeta = np.asarray(self.zeta, dtype=float).reshape(-1)
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if delta.shape != zeta.shape:
            raise ValueError("delta and zeta need one entry per constraint row")
        if np.any(delta <= 0) or np.any(zeta <= delta):
            raise ValueError("margins must satisfy zeta > delta > 0")
        if not np.allclose(W, W.T) or np.linalg.eigvalsh(W).min() <= 0:
            raise ValueError("W must be symmetric positive definite")
        if self.W_mode not in ("identity", "adaptive"):
            raise ValueError(f"unknown W mode {self.W_mode!r}")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "W", W)


@dataclass(frozen=True)
class ReferenceGeometry:
    """Steady-state constraint margins as affine functions of ``r``.

    ``margins(r) = L @ r + b0`` stacks ``a_i xi_bar_r + b_i`` for state rows
    and ``c_j nu_bar_r + d_j`` for input rows, in the order of
    :class:`PolytopicConstraints`.
    """

    M_xi: np.ndarray
    M_nu: np.ndarray
    L: np.ndarray
    b0: np.ndarray
    labels: tuple = ()

    @classmethod
    def from_plant(cls, plant: ContinuousPlant, constraints: PolytopicConstraints):
        M_xi, M_nu = reference_maps(plant)
        L = np.vstack([constraints.state_A @ M_xi, constraints.input_C @ M_nu])
        b0 = np.concatenate([constraints.state_b, constraints.input_d])
        # rows whose margin does not depend on r carry no direction
        scale = max(1.0, np.abs(L).max(initial=0.0))
        L = np.where(np.abs(L) <= 1e-13 * scale, 0.0, L)
        return cls(M_xi, M_nu, L, b0, tuple(constraints.labels))

    @property
    def l(self) -> int:  # noqa: E743
        return self.M_xi.shape[1]

    def equilibrium(self, r) -> Equilibrium:
        r = np.asarray(r, dtype=float)
        return Equilibrium(self.M_xi @ r, self.M_nu @ r)

    def margins(self, r):
        return self.L @ np.asarray(r, dtype=float) + self.b0

    def directions(self):
        """Unit r-space gradients of each margin (zero rows stay zero)."""
        norms = np.linalg.norm(self.L, axis=1)
        out = np.zeros_like(self.L)
        nz = norms > 0
        out[nz] = self.L[nz] / norms[nz, None]
        return out, norms

    def is_admissible(self, r, delta) -> bool:
        return bool(np.all(self.margins(r) <= -np.asarray(delta)))


def normalized_margins(x_N, r, terminal: TerminalData, geometry: ReferenceGeometry, weights=None):
    """(Gamma_i - V_i) / Gamma_i per row; -inf where Gamma_i is not positive."""
    eq = geometry.equilibrium(r)
    marg = terminal.margins(eq)
    w = terminal.closed_loop_weights if weights is None else weights
    V = terminal.quadratic_values(np.asarray(x_N, dtype=float) - eq.xi_bar)
    out = np.full(marg.shape, -np.inf)
    ok = marg < 0
    gam = marg[ok] ** 2 / w[ok]
    out[ok] = (gam - V[ok]) / gam
    return out


def safety_margin(x_N, r, terminal: TerminalData, geometry: ReferenceGeometry, params: ErgParams, weights=None):
    nm = normalized_margins(x_N, r, terminal, geometry, weights)
    return params.kappa * max(float(nm.min()), 0.0)


def _sqrtm_spd(W):
    w, V = np.linalg.eigh(W)
    return (V * np.sqrt(w)) @ V.T


def adaptive_weight(x_N, r, terminal: TerminalData, geometry: ReferenceGeometry, weights=None):
    """W = (M' S_I M)^{-1} with I the row of smallest normalized margin."""
    I = int(np.argmin(normalized_margins(x_N, r, terminal, geometry, weights)))
    M = geometry.M_xi
    return np.linalg.inv(M.T @ terminal.shapes[I] @ M)


def attraction(r, gamma, W, eta):
    d = np.asarray(gamma, dtype=float) - np.asarray(r, dtype=float)
    dist = math.sqrt(max(float(d @ W @ d), 0.0))
    return _sqrtm_spd(W) @ d / max(dist, eta)


def repulsion(r, geometry: ReferenceGeometry, params: ErgParams):
    units, _ = geometry.directions()
    gain = np.maximum(params.zeta + geometry.margins(r), 0.0) / (params.zeta - params.delta)
    return -(gain @ units)


def navigation_field(r, gamma, geometry: ReferenceGeometry, params: ErgParams, W=None):
    W = params.W if W is None else W
    rho = attraction(r, gamma, W, params.eta) + repulsion(r, geometry, params)
    return rho / max(float(np.linalg.norm(rho)), 1.0)


def reference_derivative(x_N, r, gamma, terminal, geometry, params: ErgParams, weights=None):
    D = safety_margin(x_N, r, terminal, geometry, params, weights)
    if D == 0.0:
        return np.zeros(geometry.l)
    W = adaptive_weight(x_N, r, terminal, geometry, weights) if params.W_mode == "adaptive" else params.W
    return D * navigation_field(r, gamma, geometry, params, W)


def _length_scale(r, gamma, geometry, params):
    """Distance over which the navigation field may change substantially."""
    units, norms = geometry.directions()
    marg = geometry.margins(r)
    width = params.zeta - params.delta
    near = (norms > 0) & (marg > -params.zeta - width)
    scale = np.inf
    if np.any(near):
        scale = float(np.min(width[near] / norms[near]))
    d = np.asarray(gamma) - np.asarray(r)
    if float(np.sqrt(max(d @ params.W @ d, 0.0))) < 2 * params.eta:
        scale = min(scale, params.eta / max(1.0, np.linalg.eigvalsh(params.W).max() ** 0.5))
    return scale


def integrate(x_N, r, gamma, H, terminal, geometry, params: ErgParams, weights=None, max_sub=10_000):
    """Advance ``r`` over ``H`` seconds with ``x_N`` frozen.

    Forward Euler with sub-steps sized by the local length scale of the
    field.  A step that would leave the terminal set of the frozen ``x_N`` or
    the admissible set is halved, and the next proposal may at most double
    the last accepted step.  Returns ``(r, |r'| at the start, substeps)``.
    """
    r = np.array(r, dtype=float)
    t, n_sub, rdot0, dt_last = 0.0, 0, None, H
    while t < H and n_sub < max_sub:
        nm = float(normalized_margins(x_N, r, terminal, geometry, weights).min())
        D = params.kappa * max(nm, 0.0)
        if D == 0.0:
            rdot0 = 0.0 if rdot0 is None else rdot0
            break
        W = adaptive_weight(x_N, r, terminal, geometry, weights) if params.W_mode == "adaptive" else params.W
        rdot = D * navigation_field(r, gamma, geometry, params, W)
        speed = float(np.linalg.norm(rdot))
        if rdot0 is None:
            rdot0 = speed
        # nothing left that could move r by a representable amount
        if speed * (H - t) <= 1e-13 * (1.0 + np.abs(r).max()):
            break
        dt = min(H - t, 0.5 * _length_scale(r, gamma, geometry, params) / D, 2.0 * dt_last)
        for _ in range(60):
            trial = r + dt * rdot
            if geometry.is_admissible(trial, params.delta) and np.min(
                normalized_margins(x_N, trial, terminal, geometry, weights)
            ) >= 0.0:
                break
            dt *= 0.5
        else:
            break
        r = trial
        t += dt
        dt_last = dt
        n_sub += 1
    return r, (rdot0 or 0.0), n_sub


def project_reference(gamma, geometry: ReferenceGeometry, delta, W=None):
    """Closest strictly admissible reference in the W-norm."""
    gamma = np.asarray(gamma, dtype=float)
    l = gamma.size
    W = np.eye(l) if W is None else np.asarray(W, dtype=float)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), geometry.b0.shape)
    const = ~np.any(geometry.L != 0, axis=1)
    if np.any(geometry.b0[const] > -delta[const]):
        raise EmptyReferenceSet("a reference-independent row violates its margin")
    A = geometry.L[~const]
    b = geometry.b0[~const] + delta[~const]
    if geometry.is_admissible(gamma, delta):
        return gamma.copy()
    prob = QpProblem(2.0 * W, -2.0 * W @ gamma, np.zeros((0, l)), np.zeros(0), A, b)
    try:
        return solve_active_set(prob).z_star
    except InfeasibleQp as exc:
        raise EmptyReferenceSet("no strictly admissible reference") from exc
