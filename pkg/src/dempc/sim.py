"""Closed-loop simulation of plant, flow controller and reference governor."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import erg as erg_mod
from .flow import FlowParams, FlowSystem, init_state
from .lti import ContinuousPlant, PolytopicConstraints, constraint_values, discretize, equilibrium_map
from .ocp import OcpSpec, build_compact, kkt_residual
from .terminal import synthesize

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("kkt_res", "term_margin", "max_cviol", "rdot_norm")


@dataclass
class Scenario:
    plant: ContinuousPlant
    constraints: PolytopicConstraints
    Q: np.ndarray
    U: np.ndarray
    R: np.ndarray
    N: int
    tau: float
    alpha: float
    gamma: np.ndarray
    r0: np.ndarray
    xi0: np.ndarray
    t_end: float
    log_interval: float
    erg: erg_mod.ErgParams | None = None
    init_mode: str = "rollout"
    flow_method: str = "rk4"
    flow_step: float | None = None
    flow_step_factor: float = 0.1
    h_plant: float | None = None
    lyapunov_eps: float = 1e-6
    violation_tol: float = 1e-3
    name: str = "scenario"
    seed: int = 0

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        self.r0 = np.asarray(self.r0, dtype=float).reshape(-1)
        self.xi0 = np.asarray(self.xi0, dtype=float).reshape(-1)
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not self.log_interval > 0:
            raise ValueError("log_interval must be positive")
        if self.gamma.size != self.plant.l or self.r0.size != self.plant.l:
            raise ValueError("references need one entry per output")
        if self.xi0.size != self.plant.n:
            raise ValueError("initial state has the wrong size")

    @property
    def step(self) -> float:
        return self.h_plant if self.h_plant else self.tau / 50.0


@dataclass
class SimTrace:
    t: np.ndarray
    xi: np.ndarray
    nu: np.ndarray
    r: np.ndarray
    psi: np.ndarray
    kkt_res: np.ndarray
    term_margin: np.ndarray
    max_cviol: np.ndarray
    rdot_norm: np.ndarray
    diverged: bool = False
    feasibility_violation: bool = False
    message: str = ""
    mu_min: float = 0.0
    info: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.size

    @property
    def dims(self):
        return self.xi.shape[1], self.nu.shape[1], self.r.shape[1]

    def header(self):
        n, m, l = self.dims
        cols = ["t"]
        cols += [f"xi_{i + 1}" for i in range(n)]
        cols += [f"nu_{i + 1}" for i in range(m)]
        cols += [f"r_{i + 1}" for i in range(l)]
        cols += [f"psi_{i + 1}" for i in range(l)]
        return cols + list(TRACE_COLUMNS)

    def matrix(self):
        return np.column_stack(
            [self.t, self.xi, self.nu, self.r, self.psi, self.kkt_res, self.term_margin, self.max_cviol, self.rdot_norm]
        )

    @classmethod
    def from_matrix(cls, data, n, m, l, **kw):
        data = np.atleast_2d(data)
        o = 1
        xi = data[:, o:o + n]
        o += n
        nu = data[:, o:o + m]
        o += m
        r = data[:, o:o + l]
        o += l
        psi = data[:, o:o + l]
        o += l
        return cls(data[:, 0], xi, nu, r, psi, data[:, o], data[:, o + 1], data[:, o + 2], data[:, o + 3], **kw)


def _flow_steps(sc: Scenario, flow: FlowSystem, h_plant):
    if sc.flow_method == "implicit":
        hf = sc.flow_step or h_plant
    else:
        hf = sc.flow_step or flow.suggested_step(sc.flow_step_factor)
    nsub = max(1, math.ceil(h_plant / hf - 1e-9))
    return h_plant / nsub, nsub


def build_controller(sc: Scenario):
    """Synthesis shared by the simulator and the tests."""
    disc = discretize(sc.plant, sc.tau)
    term = synthesize(disc, sc.constraints, sc.Q, sc.U, sc.R, sc.tau, sc.lyapunov_eps)
    spec = OcpSpec(sc.N, sc.tau, sc.Q, sc.U, sc.R, term.P, disc, sc.constraints, K=term.K)
    geom = erg_mod.ReferenceGeometry.from_plant(sc.plant, sc.constraints)
    return disc, term, spec, geom


def run(sc: Scenario, progress=None) -> SimTrace:
    disc, term, spec, geom = build_controller(sc)
    plant = sc.plant
    use_erg = sc.erg is not None
    delta = sc.erg.delta if use_erg else None
    r = sc.r0.copy() if use_erg else sc.gamma.copy()
    if use_erg and not geom.is_admissible(r, delta):
        raise erg_mod.EmptyReferenceSet("initial reference is not strictly admissible")
    eq = equilibrium_map(plant, r)
    compact = build_compact(spec, eq, delta=delta)
    weights = term.closed_loop_weights
    p = init_state(compact, sc.xi0, sc.init_mode)
    flow = FlowSystem(compact, FlowParams(sc.alpha), method=sc.flow_method)

    h_plant = sc.step
    n_outer = int(round(sc.t_end / h_plant))
    log_every = int(round(sc.log_interval / h_plant))
    if log_every < 1 or abs(log_every * h_plant - sc.log_interval) > 1e-9 * sc.log_interval:
        raise ValueError("log_interval must be a multiple of the plant step")
    hf, nsub = _flow_steps(sc, flow, h_plant)
    fd = discretize(plant, hf)
    log.info("%s: h_plant=%g, %d flow steps of %.3g s per plant step", sc.name, h_plant, nsub, hf)

    N = spec.N
    xN_slice = compact.layout.x_slice(N)
    xi = sc.xi0.copy()
    rows = []
    mu_min = 0.0
    rdot_norm = 0.0
    flagged = False
    diverged = False
    message = ""

    def record(t):
        nonlocal flagged
        nu = eq.nu_bar + p.z[: plant.m]
        psi = plant.output(xi, nu)
        x_N = eq.xi_bar + p.z[xN_slice]
        try:
            tm = float(np.min(erg_mod.normalized_margins(x_N, r, term, geom, weights)))
        except ValueError:
            tm = -np.inf
        cv = float(np.max(constraint_values(sc.constraints, xi, nu)))
        kr = kkt_residual(compact, p, xi)
        row = np.concatenate([[t], xi, nu, r, psi, [kr, tm, cv, rdot_norm]])
        if not np.all(np.isfinite(row)):
            return False
        if use_erg and tm < -sc.violation_tol and not flagged:
            flagged = True
            log.warning("%s: terminal margin %.3g at t=%.4g (recursive feasibility lost)", sc.name, tm, t)
        rows.append(row)
        return True

    record(0.0)
    for k in range(1, n_outer + 1):
        p_new, xi_new, mm = flow.advance(p, xi, hf, nsub, fd.A, fd.B)
        if not (np.all(np.isfinite(p_new.pack())) and np.all(np.isfinite(xi_new))):
            diverged = True
            message = f"state became nonfinite at t={k * h_plant:.6g}"
            log.error("%s: %s", sc.name, message)
            break
        p, xi = p_new, xi_new
        mu_min = min(mu_min, mm)
        if use_erg:
            x_N = eq.xi_bar + p.z[xN_slice]
            r_new, rdot_norm, _ = erg_mod.integrate(x_N, r, sc.gamma, h_plant, term, geom, sc.erg, weights)
            if not np.array_equal(r_new, r):
                r = r_new
                eq = equilibrium_map(plant, r)
                compact = compact.with_reference(eq, delta=delta)
                flow.refresh(compact)
        if k % log_every == 0:
            if not record(k * h_plant):
                diverged = True
                message = f"state overflowed at t={k * h_plant:.6g}"
                log.error("%s: %s", sc.name, message)
                break
            if progress is not None:
                progress(k * h_plant, sc.t_end)

    data = np.array(rows)
    trace = SimTrace.from_matrix(
        data, plant.n, plant.m, plant.l,
        diverged=diverged, feasibility_violation=flagged, message=message, mu_min=mu_min,
        info={"h_plant": h_plant, "h_flow": hf, "flow_substeps": nsub, "name": sc.name},
    )
    return trace


def metrics(trace: SimTrace, sc: Scenario) -> dict:
    if len(trace) == 0:
        raise ValueError("empty trace")
    gamma = sc.gamma
    err = np.abs(trace.psi - gamma).max(axis=1)
    step = np.abs(gamma - trace.psi[0]).max()
    settling = None
    if not trace.diverged:
        if step == 0:
            settling = 0.0 if np.all(err == 0) else None
        else:
            outside = np.flatnonzero(err >= 0.01 * step)
            if outside.size == 0:
                settling = float(trace.t[0])
            elif outside[-1] + 1 < len(trace):
                settling = float(trace.t[outside[-1] + 1])
    after = trace.t >= trace.t[0] + 0.1 * (trace.t[-1] - trace.t[0])
    if not np.any(after):
        after = np.ones(len(trace), dtype=bool)
    return {
        "settling_time": settling,
        "max_constraint_value": float(trace.max_cviol.max()),
        "max_kkt_residual": float(trace.kkt_res[after].max()),
        "min_terminal_margin": float(trace.term_margin.min()),
        "final_output_error": float(err[-1]),
        "max_rdot_norm": float(trace.rdot_norm.max()),
        "diverged": bool(trace.diverged),
    }
