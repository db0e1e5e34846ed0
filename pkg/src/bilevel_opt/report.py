"""Render convergence figures next to the trace CSVs."""

import os
from glob import glob

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .trace import read_trace


def _series(records, attr):
    ts, vals = [], []
    for r in records:
        v = getattr(r, attr)
        if v is not None:
            ts.append(r.t)
            vals.append(v)
    return np.asarray(ts), np.asarray(vals)


def render_report(trace_dir: str, out_dir: str | None = None) -> list[str]:
    """Draw one figure per available metric family; returns the file paths."""
    out_dir = out_dir or trace_dir
    paths = sorted(glob(os.path.join(trace_dir, "trace_*.csv")))
    if not paths:
        raise FileNotFoundError(f"no trace_*.csv files under {trace_dir}")
    traces = {os.path.basename(p): read_trace(p) for p in paths}

    written = []
    panels = [
        ("metric_m", "composite convergence metric", "log"),
        ("grad_mapping_norm", "gradient mapping norm", "log"),
        ("objective", "objective value", "linear"),
        ("lyapunov", "Lyapunov potential", "linear"),
    ]
    for attr, label, yscale in panels:
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        drew = False
        for name, records in traces.items():
            ts, vals = _series(records, attr)
            if len(vals) == 0:
                continue
            if yscale == "log" and np.any(vals <= 0):
                vals = np.maximum(vals, 1e-300)
            ax.plot(ts, vals, lw=0.9, alpha=0.8, label=name.replace(".csv", ""))
            drew = True
        if not drew:
            plt.close(fig)
            continue
        ax.set_xlabel("iteration")
        ax.set_ylabel(label)
        ax.set_yscale(yscale)
        ax.grid(True, alpha=0.3)
        if len(traces) <= 12:
            ax.legend(fontsize=7)
        fig.tight_layout()
        target = os.path.join(out_dir, f"{attr}.png")
        fig.savefig(target, dpi=150)
        plt.close(fig)
        written.append(target)
    return written
