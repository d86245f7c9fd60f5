"""Time the compiled and pure-Python RK4 flow kernels on the double integrator.

    python3 benchmarks/bench_flow.py [--steps 20000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from dempc import _kernels
from dempc.flow import FlowParams, FlowSystem, init_state
from dempc.lti import ContinuousPlant, PolytopicConstraints, discretize, equilibrium_map
from dempc.ocp import OcpSpec, build_compact
from dempc.terminal import synthesize


def double_integrator_flow(alpha, backend):
    plant = ContinuousPlant([[0, 1], [0, 0]], [[0], [1]], [[1, 0]], [[0]])
    cons = PolytopicConstraints.from_boxes([0, -10], [20.5, 10], [-10], [30])
    Q, U, R, tau = np.diag([1.0, 0.01]), np.zeros((2, 1)), np.array([[0.01]]), 0.1
    disc = discretize(plant, tau)
    term = synthesize(disc, cons, Q, U, R, tau)
    spec = OcpSpec(15, tau, Q, U, R, term.P, disc, cons, K=term.K)
    compact = build_compact(spec, equilibrium_map(plant, [20.0]))
    return plant, compact, FlowSystem(compact, FlowParams(alpha), backend=backend)


def bench(backend, steps, repeat, alpha=1e4):
    plant, compact, fs = double_integrator_flow(alpha, backend)
    h = fs.suggested_step()
    fd = discretize(plant, h)
    best = np.inf
    for _ in range(repeat):
        p = init_state(compact, np.zeros(2), "rollout")
        t0 = time.perf_counter()
        p, xi, _ = fs.advance(p, np.zeros(2), h, steps, fd.A, fd.B)
        best = min(best, time.perf_counter() - t0)
    return best, p.pack(), xi


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    avail = _kernels.backends()
    print(f"default backend: {_kernels.BACKEND}; available: {', '.join(sorted(avail))}")
    results = {}
    for name in sorted(avail):
        sec, p, xi = bench(name, args.steps, args.repeat)
        results[name] = (sec, p, xi)
        print(f"{name:>9}: {sec:.4f} s for {args.steps} RK4 steps ({1e6 * sec / args.steps:.2f} us/step)")
    if len(results) == 2:
        (tc, pc, xc), (tp, pp, xp) = results["compiled"], results["python"]
        diff = max(np.abs(pc - pp).max(), np.abs(xc - xp).max())
        print(f"speed-up: {tp / tc:.1f}x; max state difference {diff:.2e}")


if __name__ == "__main__":
    main()
