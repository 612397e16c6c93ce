"""Optional PNG figures next to the CSV outputs (``--figures``).

The CSV files remain the interface; figures are a convenience for people
reading a run directory.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def run_figures(records, traj, out_dir) -> list[str]:
    plt = _pyplot()
    out_dir = Path(out_dir)
    t = np.array([rec.t_geom for rec in records])
    paths = []

    fig, axes = plt.subplots(2, 2, figsize=(9, 7))
    ax = axes[0, 0]
    m = np.array([rec.mass_extrapolated for rec in records])
    ax.plot(t, m, label="extrapolated")
    for j in range(len(records[0].mass_ladder)):
        ax.plot(t, [rec.mass_ladder[j][1] for rec in records], lw=0.6, alpha=0.6)
    ax.set(xlabel="t (geometric)", ylabel="ADM mass", title="mass")
    ax.legend(fontsize=7)
    ax = axes[0, 1]
    ax.plot(t, [rec.eh_functional for rec in records])
    ax.set(xlabel="t (geometric)", ylabel="int R dvol", title="Einstein-Hilbert")
    ax = axes[1, 0]
    ax.plot(t, [rec.min_R for rec in records], label="min R")
    ax.plot(t, [rec.max_R for rec in records], label="max R")
    ax.set(xlabel="t (geometric)", title="scalar curvature")
    ax.legend(fontsize=7)
    ax = axes[1, 1]
    ax.plot(t, [rec.min_u for rec in records], label="min u")
    ax.plot(t, [rec.env_lo for rec in records], "--", label="lower envelope")
    ax.plot(t, [rec.max_u for rec in records], label="max u")
    ax.plot(t, [rec.env_hi for rec in records], "--", label="upper envelope")
    ax.set(xlabel="t (geometric)", title="envelope")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = out_dir / "diagnostics.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(str(path))

    fig, ax = plt.subplots(figsize=(6, 4))
    r = traj.data.grid.r
    picks = np.unique(np.linspace(0, len(traj.states) - 1, 5).astype(int))
    for k in picks:
        s = traj.states[k]
        v = np.abs(s.v)
        ok = v > 0
        ax.loglog(r[ok], v[ok], label=f"t={s.t_geom:.3g}")
    ax.set(xlabel="r", ylabel="|1 - u|", title="far-field decay")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = out_dir / "profiles.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(str(path))
    return paths


def convergence_figure(report, out_dir) -> str:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, q in report.quantities.items():
        vals = np.array(q.values, dtype=float)
        if q.exact or not np.any(vals > 0):
            continue
        x = np.arange(vals.size)
        ax.semilogy(x, vals, "o-", label=name)
    ax.set(xlabel="level", ylabel="error measure", title="refinement study")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(out_dir) / "convergence.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
