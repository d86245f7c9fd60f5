import numpy as np
import pytest

from dempc.flow import PrimalDualState
from dempc.lti import DiscretePlant, Equilibrium, PolytopicConstraints, equilibrium_map
from dempc.ocp import InadmissibleReference, OcpSpec, build_compact, kkt_residual, lagrangian_gradient

from factories import random_instance, random_spec
from oracles import finite_difference_gradient


def scalar_spec(N=1):
    d = DiscretePlant(np.eye(1), np.eye(1), 1.0)
    cons = PolytopicConstraints(np.zeros((0, 1)), np.zeros(0), np.array([[1.0]]), np.array([-1.0]))
    return OcpSpec(N, 1.0, np.eye(1), np.zeros((1, 1)), np.eye(1), np.eye(1) * 2, d, cons)


def zero_state(c):
    return PrimalDualState(np.zeros(c.n_z), np.zeros(c.n_lambda), np.zeros(c.n_h))


def test_scalar_single_step_rows():
    c = build_compact(scalar_spec(), Equilibrium(np.zeros(1), np.zeros(1)))
    np.testing.assert_array_equal(c.G, [[-1.0, 1.0]])
    np.testing.assert_array_equal(c.g([0.7]), [0.7])


def test_double_integrator_dimensions(di_case):
    c = build_compact(di_case.spec, equilibrium_map(di_case.plant, [20.0]))
    assert (c.n_z, c.n_lambda, c.n_h) == (45, 30, 90)
    assert np.linalg.matrix_rank(c.G) == 30


def test_layout_blocks_cover_z_once(di_case):
    lay = di_case.spec.layout
    seen = np.zeros(lay.n_z, dtype=int)
    for k in range(lay.N):
        seen[lay.u_slice(k)] += 1
        seen[lay.x_slice(k + 1)] += 1
    assert np.all(seen == 1)
    assert lay.u_slice(0) == slice(0, 1) and lay.x_slice(lay.N).stop == lay.n_z


def test_equilibrium_is_optimal(di_case):
    eq = equilibrium_map(di_case.plant, [12.0])
    c = build_compact(di_case.spec, eq)
    p = zero_state(c)
    assert not np.any(c.g(eq.xi_bar))
    assert np.abs(c.G @ p.z - c.g(eq.xi_bar)).max() == 0
    assert not np.any(lagrangian_gradient(c, p, eq.xi_bar))
    assert kkt_residual(c, p, eq.xi_bar) == 0.0


def test_inadmissible_reference_refused(di_case):
    with pytest.raises(InadmissibleReference):
        build_compact(di_case.spec, equilibrium_map(di_case.plant, [21.0]))
    eq = equilibrium_map(di_case.plant, [20.48])
    build_compact(di_case.spec, eq)
    with pytest.raises(InadmissibleReference):
        build_compact(di_case.spec, eq, delta=0.05)


def test_gradient_dual_free_is_quadratic(rng):
    c, xi, _ = random_instance(rng)
    xi_bar = c.equilibrium.xi_bar
    z = rng.normal(size=c.n_z)
    p = PrimalDualState(z, np.zeros(c.n_lambda), np.zeros(c.n_h))
    np.testing.assert_allclose(lagrangian_gradient(c, p, xi_bar), c.cost_hessian @ z, atol=1e-12)


def test_gradient_matches_finite_differences(rng):
    for _ in range(5):
        c, xi, _ = random_instance(rng)
        z = rng.normal(size=c.n_z)
        lam = rng.normal(size=c.n_lambda)
        mu = rng.uniform(0, 1, size=c.n_h)
        p = PrimalDualState(z, lam, mu)
        fd = finite_difference_gradient(lambda v: c.lagrangian(v, lam, mu, xi), z)
        g = lagrangian_gradient(c, p, xi)
        assert np.abs(g - fd).max() <= 1e-6 * max(1.0, np.abs(g).max())


def test_gradient_superposition(rng):
    c, xi, _ = random_instance(rng)
    a = [PrimalDualState(rng.normal(size=c.n_z), rng.normal(size=c.n_lambda), rng.uniform(size=c.n_h))
         for _ in range(2)]
    xi0 = c.equilibrium.xi_bar
    mix = PrimalDualState(a[0].z + a[1].z, a[0].lam + a[1].lam, a[0].mu + a[1].mu)
    lhs = lagrangian_gradient(c, mix, xi0)
    rhs = lagrangian_gradient(c, a[0], xi0) + lagrangian_gradient(c, a[1], xi0)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_tau_in_stage_blocks(di_case):
    c = build_compact(di_case.spec, equilibrium_map(di_case.plant, [5.0]))
    lay = c.layout
    tau = di_case.tau
    np.testing.assert_allclose(c.cost_hessian[lay.u_slice(0), lay.u_slice(0)], 2 * tau * di_case.R)
    x1 = lay.x_slice(1)
    np.testing.assert_allclose(c.cost_hessian[x1, x1], 2 * tau * di_case.Q)
    xN = lay.x_slice(lay.N)
    np.testing.assert_allclose(c.cost_hessian[xN, xN], 2 * di_case.terminal.P)


def test_hessian_spectrum_bound(di_case):
    c = build_compact(di_case.spec, equilibrium_map(di_case.plant, [5.0]))
    stage = np.block([[di_case.Q, di_case.U], [di_case.U.T, di_case.R]])
    lo = di_case.tau * np.linalg.eigvalsh(stage).min()
    assert np.linalg.eigvalsh(c.cost_hessian).min() >= lo - 1e-10


def test_kkt_residual_at_oracle_and_perturbed(rng):
    for _ in range(5):
        c, xi, sol = random_instance(rng)
        p = PrimalDualState(sol.z_star, sol.lambda_star, sol.mu_star)
        assert kkt_residual(c, p, xi) <= 1e-8
        z = sol.z_star.copy()
        z[int(rng.integers(c.n_z))] += 1e-3
        q = PrimalDualState(z, sol.lambda_star, sol.mu_star)
        assert kkt_residual(c, q, xi) >= 1e-4 * np.linalg.eigvalsh(c.cost_hessian).min()


def test_kkt_residual_rejects_negative_mu(rng):
    c, xi, sol = random_instance(rng)
    mu = sol.mu_star.copy()
    mu[0] = -1.0
    with pytest.raises(ValueError):
        kkt_residual(c, PrimalDualState(sol.z_star, sol.lambda_star, mu), xi)


def test_spec_invariants():
    d = DiscretePlant(np.eye(1), np.eye(1), 1.0)
    cons = PolytopicConstraints(np.zeros((0, 1)), np.zeros(0), np.array([[1.0]]), np.array([-1.0]))
    with pytest.raises(ValueError):
        OcpSpec(0, 1.0, np.eye(1), None, np.eye(1), np.eye(1), d, cons)
    with pytest.raises(ValueError):
        OcpSpec(1, 1.0, np.eye(1), None, -np.eye(1), np.eye(1), d, cons)
    with pytest.raises(ValueError):
        OcpSpec(1, 1.0, np.eye(1), np.array([[2.0]]), np.eye(1), np.eye(1), d, cons)
    with pytest.raises(ValueError):
        OcpSpec(1, 1.0, np.eye(1), None, np.eye(1), np.zeros((1, 1)), d, cons)


def test_with_reference_shares_matrices(di_case):
    c = build_compact(di_case.spec, equilibrium_map(di_case.plant, [5.0]))
    c2 = c.with_reference(equilibrium_map(di_case.plant, [6.0]))
    assert c2.G is c.G and c2.cost_hessian is c.cost_hessian
    fresh = build_compact(di_case.spec, equilibrium_map(di_case.plant, [6.0]))
    np.testing.assert_array_equal(c2.h0, fresh.h0)


def test_random_spec_sizes(rng):
    for _ in range(20):
        s = random_spec(rng)
        assert s.N * s.constraints.n_h <= 12
