"""SVG plots of a simulation trace (outputs, states, inputs)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sim import SimTrace  # noqa: E402

# keep the SVG text stable between runs
plt.rcParams["svg.hashsalt"] = "dempc"
plt.rcParams["svg.fonttype"] = "none"


def _box_bounds(constraints, n, kind):
    """Per-component (lower, upper) read back from single-entry rows."""
    lo = np.full(n, np.nan)
    hi = np.full(n, np.nan)
    if constraints is None:
        return lo, hi
    rows, offs = (constraints.state_A, constraints.state_b) if kind == "x" else (constraints.input_C, constraints.input_d)
    for a, b in zip(rows, offs):
        nz = np.flatnonzero(a)
        if nz.size != 1:
            continue
        k = nz[0]
        bound = -b / a[k]
        if a[k] > 0:
            hi[k] = bound
        else:
            lo[k] = bound
    return lo, hi


def _bounds_lines(ax, lo, hi):
    for v in (lo, hi):
        if np.isfinite(v):
            ax.axhline(v, color="k", linestyle=":", linewidth=0.8)


def _output_bounds(scenario, l):
    """Bounds for outputs that equal a single state component."""
    lo = np.full(l, np.nan)
    hi = np.full(l, np.nan)
    if scenario is None:
        return lo, hi
    slo, shi = _box_bounds(scenario.constraints, scenario.plant.n, "x")
    C, D = scenario.plant.C_c, scenario.plant.D_c
    for i in range(l):
        nz = np.flatnonzero(C[i])
        if nz.size == 1 and C[i, nz[0]] == 1.0 and not np.any(D[i]):
            lo[i], hi[i] = slo[nz[0]], shi[nz[0]]
    return lo, hi


def _stack(t, series, labels, title, bounds=None, dashed=None):
    k = series.shape[1]
    fig, axes = plt.subplots(k, 1, figsize=(6.4, 1.9 * k + 0.6), sharex=True, squeeze=False)
    for i in range(k):
        ax = axes[i, 0]
        line, = ax.plot(t, series[:, i], linewidth=1.2, label=labels[i])
        if dashed is not None:
            ax.plot(t, dashed[:, i], linestyle="--", color=line.get_color(), linewidth=1.0, label=f"r_{i + 1}")
        if bounds is not None:
            _bounds_lines(ax, bounds[0][i], bounds[1][i])
        ax.set_ylabel(labels[i])
        ax.grid(True, linewidth=0.3)
        if dashed is not None:
            ax.legend(loc="best", fontsize=7)
    axes[-1, 0].set_xlabel("t [s]")
    axes[0, 0].set_title(title)
    fig.tight_layout()
    return fig


def plot_trace(trace: SimTrace, out_dir, stem, scenario=None):
    """Write ``<stem>_output.svg``, ``<stem>_states.svg`` and ``<stem>_inputs.svg``."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n, m, l = trace.dims
    cons = scenario.constraints if scenario is not None else None
    figs = {
        "output": _stack(trace.t, trace.psi, [f"psi_{i + 1}" for i in range(l)], "outputs (applied reference dashed)",
                         _output_bounds(scenario, l), dashed=trace.r),
        "states": _stack(trace.t, trace.xi, [f"xi_{i + 1}" for i in range(n)], "states", _box_bounds(cons, n, "x")),
        "inputs": _stack(trace.t, trace.nu, [f"nu_{i + 1}" for i in range(m)], "inputs", _box_bounds(cons, m, "u")),
    }
    paths = []
    for kind, fig in figs.items():
        p = out_dir / f"{stem}_{kind}.svg"
        fig.savefig(p, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(p)
    return paths
