"""SVG figures for penetration-rate sweeps."""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiments import SweepResult, sweep_table  # noqa: E402

PLOT_KINDS = (
    "per_class_time_vs_gamma",
    "per_class_energy_vs_gamma",
    "savings_vs_gamma",
    "convergence_trace",
)

# fixed rc so repeated runs give identical bytes
RC = {
    "svg.hashsalt": "mixedroute",
    "svg.fonttype": "none",
    "figure.figsize": (5.5, 3.8),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "lines.markersize": 4,
}


def _series(table, col):
    pts = [(r["gamma"], r[col]) for r in table if r[col] is not None]
    return [p[0] for p in pts], [p[1] for p in pts]


def _class_lines(ax, table, cav_col, nc_col, ylabel):
    for col, label, marker in ((cav_col, "CAV", "o"), (nc_col, "non-CAV", "s")):
        g, v = _series(table, col)
        ax.plot(g, v, marker=marker, label=label)
    ax.set_xlabel("CAV penetration rate γ")
    ax.set_ylabel(ylabel)
    ax.legend()


def build_figure(result: SweepResult, kind: str):
    """Matplotlib figure of ``kind``; the caller owns (and closes) it."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {', '.join(PLOT_KINDS)}")
    if not result.rows:
        raise ValueError("cannot plot an empty sweep")
    table = sweep_table(result)
    fig, ax = plt.subplots()
    if kind == "per_class_time_vs_gamma":
        _class_lines(ax, table, "cav_avg_time_min", "noncav_avg_time_min",
                     "average travel time [min/veh]")
    elif kind == "per_class_energy_vs_gamma":
        _class_lines(ax, table, "cav_energy_usd", "noncav_energy_usd",
                     "average energy cost [$/veh]")
    elif kind == "savings_vs_gamma":
        metric = "time" if result.objective == "time" else "energy"
        _class_lines(ax, table, f"cav_{metric}_savings_pct", f"noncav_{metric}_savings_pct",
                     f"{metric} savings vs γ=0 [%]")
        ax.axhline(0.0, color="0.5", linewidth=0.8)
    else:
        for r in result.rows:
            if r.outer_trace:
                # an exact fixed point reports 0, which a log axis cannot show
                ax.semilogy(range(1, len(r.outer_trace) + 1), np.maximum(r.outer_trace, 1e-16),
                            label=f"γ={r.gamma:.2f}", linewidth=0.9)
        ax.set_xlabel("outer iteration")
        ax.set_ylabel("relative L1 flow change [-]")
        if len(result.rows) <= 8:
            ax.legend()
    fig.tight_layout()
    return fig


def emit_plot(result: SweepResult, kind: str, path) -> Path:
    """Render one figure of ``kind`` to ``path`` as SVG."""
    path = Path(path)
    with plt.rc_context(RC):
        fig = build_figure(result, kind)
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return path
