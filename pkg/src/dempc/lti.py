"""Continuous LTI plants, polytopic constraints and steady-state maps."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm


class DiscretizationError(ArithmeticError):
    pass


class EquilibriumError(ValueError):
    pass


def _as_matrix(a, rows=None, cols=None, name="matrix"):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional")
    if rows is not None and a.shape[0] != rows:
        raise ValueError(f"{name} has {a.shape[0]} rows, expected {rows}")
    if cols is not None and a.shape[1] != cols:
        raise ValueError(f"{name} has {a.shape[1]} columns, expected {cols}")
    a.setflags(write=False)
    return a


def _pbh_rank_deficient(A, X, transpose=False):
    """Eigenvalues with nonnegative real part failing the PBH rank test."""
    n = A.shape[0]
    bad = []
    for lam in np.linalg.eigvals(A):
        if lam.real < -1e-9:
            continue
        if transpose:
            M = np.vstack([lam * np.eye(n) - A, X])
        else:
            M = np.hstack([lam * np.eye(n) - A, X])
        if np.linalg.matrix_rank(M, tol=1e-9 * max(1.0, np.abs(M).max())) < n:
            bad.append(lam)
    return bad


@dataclass(frozen=True)
class ContinuousPlant:
    """xi' = A_c xi + B_c nu,  psi = C_c xi + D_c nu."""

    A_c: np.ndarray
    B_c: np.ndarray
    C_c: np.ndarray
    D_c: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A_c, name="A_c")
        n = A.shape[0]
        if A.shape[1] != n:
            raise ValueError("A_c must be square")
        B = _as_matrix(self.B_c, rows=n, name="B_c")
        C = _as_matrix(self.C_c, cols=n, name="C_c")
        D = _as_matrix(self.D_c, rows=C.shape[0], cols=B.shape[1], name="D_c")
        object.__setattr__(self, "A_c", A)
        object.__setattr__(self, "B_c", B)
        object.__setattr__(self, "C_c", C)
        object.__setattr__(self, "D_c", D)
        # advisory only: a bad tolerance should not reject a known-good model
        if _pbh_rank_deficient(A, B):
            warnings.warn("(A_c, B_c) does not look stabilizable", RuntimeWarning)
        if _pbh_rank_deficient(A, C, transpose=True):
            warnings.warn("(A_c, C_c) does not look detectable", RuntimeWarning)

    @property
    def n(self) -> int:
        return self.A_c.shape[0]

    @property
    def m(self) -> int:
        return self.B_c.shape[1]

    @property
    def l(self) -> int:  # noqa: E743
        return self.C_c.shape[0]

    def output(self, xi, nu):
        return self.C_c @ xi + self.D_c @ nu


@dataclass(frozen=True)
class DiscretePlant:
    A: np.ndarray
    B: np.ndarray
    tau: float

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


def discretize(plant: ContinuousPlant, tau: float) -> DiscretePlant:
    """Zero-order-hold discretization.

    Both matrices come from one exponential of the augmented generator
    ``[[A_c, B_c], [0, 0]] * tau``, whose top blocks are ``exp(A_c tau)`` and
    ``int_0^tau exp(A_c t) dt B_c``.
    """
    if not tau > 0:
        raise ValueError("discretization step must be positive")
    n, m = plant.n, plant.m
    M = np.zeros((n + m, n + m))
    M[:n, :n] = plant.A_c
    M[:n, n:] = plant.B_c
    E = expm(M * tau)
    if not np.all(np.isfinite(E)):
        raise DiscretizationError(f"matrix exponential is not finite for tau={tau}")
    A = _as_matrix(E[:n, :n].copy())
    B = _as_matrix(E[:n, n:].copy())
    return DiscretePlant(A, B, float(tau))


@dataclass(frozen=True)
class PolytopicConstraints:
    """State rows ``a_i xi + b_i <= 0`` and input rows ``c_j nu + d_j <= 0``."""

    state_A: np.ndarray  # (c_xi, n)
    state_b: np.ndarray  # (c_xi,)
    input_C: np.ndarray  # (c_nu, m)
    input_d: np.ndarray  # (c_nu,)
    labels: tuple = field(default=())

    def __post_init__(self):
        sa = np.asarray(self.state_A, dtype=float)
        ic = np.asarray(self.input_C, dtype=float)
        sb = np.asarray(self.state_b, dtype=float).reshape(-1)
        idd = np.asarray(self.input_d, dtype=float).reshape(-1)
        if sa.ndim != 2 or ic.ndim != 2:
            raise ValueError("constraint row blocks must be two-dimensional")
        if sa.shape[0] != sb.size or ic.shape[0] != idd.size:
            raise ValueError("row/offset counts differ")
        for rows in (sa, ic):
            if rows.size and np.any(np.all(rows == 0, axis=1)):
                raise ValueError("constraint rows must be nonzero")
        for name, v in (("state_A", sa), ("state_b", sb), ("input_C", ic), ("input_d", idd)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if not self.labels:
            labels = tuple(f"x{i}" for i in range(self.c_xi)) + tuple(
                f"u{j}" for j in range(self.c_nu)
            )
            object.__setattr__(self, "labels", labels)

    @property
    def c_xi(self) -> int:
        return self.state_A.shape[0]

    @property
    def c_nu(self) -> int:
        return self.input_C.shape[0]

    @property
    def n_h(self) -> int:
        return self.c_xi + self.c_nu

    @classmethod
    def from_boxes(cls, state_lower, state_upper, input_lower, input_upper):
        """Expand boxes into two rows per bounded component (lower row first).

        Infinite bounds produce no row.
        """

        def expand(lo, hi, prefix):
            lo = np.asarray(lo, dtype=float).reshape(-1)
            hi = np.asarray(hi, dtype=float).reshape(-1)
            if lo.shape != hi.shape or np.any(lo >= hi):
                raise ValueError(f"{prefix} box needs lower < upper componentwise")
            rows, offs, labels = [], [], []
            for k, (a, b) in enumerate(zip(lo, hi)):
                if np.isfinite(a):
                    e = np.zeros(lo.size)
                    e[k] = -1.0
                    rows.append(e)
                    offs.append(a)
                    labels.append(f"{prefix}{k + 1}>={a:g}")
                if np.isfinite(b):
                    e = np.zeros(lo.size)
                    e[k] = 1.0
                    rows.append(e)
                    offs.append(-b)
                    labels.append(f"{prefix}{k + 1}<={b:g}")
            return np.array(rows).reshape(len(rows), lo.size), np.array(offs), labels

        sA, sb, sl = expand(state_lower, state_upper, "x")
        iC, idd, il = expand(input_lower, input_upper, "u")
        return cls(sA, sb, iC, idd, tuple(sl + il))

    def stacked(self, state_rows=None, input_rows=None):
        """Concatenate extra raw rows after the existing ones."""
        sA, sb = self.state_A, self.state_b
        iC, idd = self.input_C, self.input_d
        labels = list(self.labels[: self.c_xi])
        ilabels = list(self.labels[self.c_xi:])
        for a, b in state_rows or ():
            sA = np.vstack([sA, np.atleast_2d(a)])
            sb = np.append(sb, b)
            labels.append(f"x-row{len(labels) + 1}")
        for c, d in input_rows or ():
            iC = np.vstack([iC, np.atleast_2d(c)])
            idd = np.append(idd, d)
            ilabels.append(f"u-row{len(ilabels) + 1}")
        return PolytopicConstraints(sA, sb, iC, idd, tuple(labels + ilabels))


@dataclass(frozen=True)
class Equilibrium:
    xi_bar: np.ndarray
    nu_bar: np.ndarray


def reference_maps(plant: ContinuousPlant):
    """Linear maps ``gamma -> (xi_bar, nu_bar)`` as an (n, l) and an (m, l) matrix.

    The stacked steady-state system is solved in the least-squares sense so a
    singular ``A_c`` (integrators) is fine.  Raises if some unit reference has
    no exact equilibrium.
    """
    n, m, l = plant.n, plant.m, plant.l
    S = np.block([[plant.A_c, plant.B_c], [plant.C_c, plant.D_c]])
    rhs = np.vstack([np.zeros((n, l)), np.eye(l)])
    sol, *_ = np.linalg.lstsq(S, rhs, rcond=None)
    res = S @ sol - rhs
    if np.abs(res).max() > 1e-9:
        raise EquilibriumError("no equilibrium for this output dimension (stacked system inconsistent)")
    return sol[:n], sol[n:]


def equilibrium_map(plant: ContinuousPlant, gamma) -> Equilibrium:
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    if gamma.size != plant.l:
        raise ValueError(f"reference has length {gamma.size}, expected {plant.l}")
    n = plant.n
    S = np.block([[plant.A_c, plant.B_c], [plant.C_c, plant.D_c]])
    rhs = np.concatenate([np.zeros(n), gamma])
    sol, *_ = np.linalg.lstsq(S, rhs, rcond=None)
    xi_bar, nu_bar = sol[:n], sol[n:]
    if np.abs(plant.A_c @ xi_bar + plant.B_c @ nu_bar).max() > 1e-10 * (1 + np.abs(xi_bar).max()) or np.abs(
        plant.output(xi_bar, nu_bar) - gamma
    ).max() > 1e-10 * (1 + np.abs(gamma).max()):
        raise EquilibriumError("no equilibrium for this reference")
    return Equilibrium(xi_bar, nu_bar)


def constraint_values(constraints: PolytopicConstraints, xi, nu) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    nu = np.asarray(nu, dtype=float)
    return np.concatenate(
        [constraints.state_A @ xi + constraints.state_b, constraints.input_C @ nu + constraints.input_d]
    )


def is_strictly_admissible(plant, constraints, delta, gamma) -> bool:
    eq = equilibrium_map(plant, gamma)
    vals = constraint_values(constraints, eq.xi_bar, eq.nu_bar)
    return bool(np.all(vals <= -np.broadcast_to(np.asarray(delta, dtype=float), vals.shape)))
