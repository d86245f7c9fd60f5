import numpy as np
import pytest

from dempc.lti import ContinuousPlant, PolytopicConstraints, discretize
from dempc.ocp import OcpSpec
from dempc.terminal import synthesize

HCW_RATE = 1.1e-3


def di_plant():
    return ContinuousPlant([[0, 1], [0, 0]], [[0], [1]], [[1, 0]], [[0]])


def di_constraints(nu_min=-10.0):
    return PolytopicConstraints.from_boxes([0, -10], [20.5, 10], [nu_min], [30])


def hcw_plant(n=HCW_RATE):
    A = np.zeros((6, 6))
    A[0, 3] = A[1, 4] = A[2, 5] = 1.0
    A[3, 0] = 3 * n * n
    A[3, 4] = 2 * n
    A[4, 3] = -2 * n
    A[5, 2] = -n * n
    B = np.vstack([np.zeros((3, 3)), np.eye(3)])
    C = np.hstack([np.eye(3), np.zeros((3, 3))])
    return ContinuousPlant(A, B, C, np.zeros((3, 3)))


def hcw_constraints():
    return PolytopicConstraints.from_boxes(
        [0.1, -0.2, -10.1, -0.4, -0.4, -0.4], [60.1, 0.2, 10.1, 0.4, 0.4, 0.4],
        [-0.02, -0.01, -0.002], [0.02, 0.01, 0.002],
    )


DI_COST = dict(Q=np.diag([1.0, 0.01]), U=np.zeros((2, 1)), R=np.array([[0.01]]), tau=0.1, N=15)
HCW_COST = dict(Q=np.diag([0.01, 0.01, 0.01, 1, 1, 1]), U=np.zeros((6, 3)), R=1e4 * np.eye(3), tau=5.0, N=10)


class CaseStudy:
    def __init__(self, plant, constraints, cost):
        self.plant = plant
        self.constraints = constraints
        self.Q, self.U, self.R = cost["Q"], cost["U"], cost["R"]
        self.tau, self.N = cost["tau"], cost["N"]
        self.disc = discretize(plant, self.tau)
        self.terminal = synthesize(self.disc, constraints, self.Q, self.U, self.R, self.tau)
        self.spec = OcpSpec(self.N, self.tau, self.Q, self.U, self.R, self.terminal.P, self.disc, constraints,
                            K=self.terminal.K)


@pytest.fixture(scope="session")
def di_case():
    return CaseStudy(di_plant(), di_constraints(-10.0), DI_COST)


@pytest.fixture(scope="session")
def di4_case():
    return CaseStudy(di_plant(), di_constraints(-4.0), DI_COST)


@pytest.fixture(scope="session")
def hcw_case():
    return CaseStudy(hcw_plant(), hcw_constraints(), HCW_COST)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class CliRun:
    def __init__(self, code, out, err, csv):
        self.code, self.out, self.err, self.csv = code, out, err, csv


@pytest.fixture(scope="session")
def cli_run(tmp_path_factory):
    """Run ``dempc run`` once per (scenario, flags) and cache the outcome."""
    import contextlib
    import io

    from dempc.cli import main

    cache = {}

    def go(name, *flags):
        key = (name, flags)
        if key not in cache:
            out_dir = tmp_path_factory.mktemp(name)
            buf_out, buf_err = io.StringIO(), io.StringIO()
            with contextlib.redirect_stdout(buf_out), contextlib.redirect_stderr(buf_err):
                code = main(["run", name, "--out", str(out_dir), *flags])
            cache[key] = CliRun(code, buf_out.getvalue(), buf_err.getvalue(), out_dir / f"{name}.csv")
        return cache[key]

    return go


_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""

    def add(number, title, checks, elapsed, budget):
        checks = dict(checks)
        checks[f"runtime {elapsed:.1f}s < {budget:g}s"] = elapsed < budget
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = f"criterion {number} ({title}): {'PASS' if ok else 'FAIL'}"
        if failed:
            line += " | failed: " + "; ".join(failed)
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok, failed

    return add


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
